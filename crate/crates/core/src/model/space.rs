//! The model search space: which term shapes a fit may use.
//!
//! A model is a sum of terms, each a product of per-parameter factors
//! `x^i * log2(x)^j` with `i` drawn from a fixed set of small rationals and
//! `j` from {0, 1, 2}. The default exponent sets give 53 non-constant shapes
//! per parameter; with an always-present intercept that makes 54 single-term
//! hypotheses, and 1432 hypotheses at up to two terms.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// An exact small rational, used for polynomial exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ratio {
    pub num: i32,
    pub den: u32,
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };

    pub fn new(num: i32, den: u32) -> Ratio {
        assert!(den != 0, "zero denominator");
        let g = gcd(num.unsigned_abs(), den);
        Ratio {
            num: num / g as i32,
            den: den / g,
        }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if a == 0 {
        return b.max(1);
    }
    let (mut a, mut b) = (a, b);
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        // Exact cross-multiplication; denominators are positive.
        (self.num as i64 * other.den as i64).cmp(&(other.num as i64 * self.den as i64))
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// One parameter's contribution to a term: `param^poly * log2(param)^log`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Factor {
    pub param: String,
    pub poly: Ratio,
    pub log: u32,
}

impl Factor {
    pub fn eval(&self, value: f64) -> f64 {
        let mut v = 1.0;
        if !self.poly.is_zero() {
            v *= value.powf(self.poly.value());
        }
        if self.log > 0 {
            v *= value.log2().powi(self.log as i32);
        }
        v
    }

    pub fn is_identity(&self) -> bool {
        self.poly.is_zero() && self.log == 0
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.poly.is_zero() {
            if self.poly == Ratio::new(1, 1) {
                parts.push(self.param.clone());
            } else if self.poly.den == 1 {
                parts.push(format!("{}^{}", self.param, self.poly.num));
            } else {
                parts.push(format!("{}^({})", self.param, self.poly));
            }
        }
        if self.log > 0 {
            if self.log == 1 {
                parts.push(format!("log2({})", self.param));
            } else {
                parts.push(format!("log2({})^{}", self.param, self.log));
            }
        }
        if parts.is_empty() {
            parts.push("1".to_string());
        }
        write!(f, "{}", parts.join(" * "))
    }
}

/// A term shape: product of factors over distinct parameters, sorted by
/// parameter name so equal shapes compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TermShape {
    pub factors: Vec<Factor>,
}

impl TermShape {
    pub fn single(param: &str, poly: Ratio, log: u32) -> TermShape {
        TermShape {
            factors: vec![Factor {
                param: param.to_string(),
                poly,
                log,
            }],
        }
    }

    /// Product of two shapes over disjoint parameters.
    pub fn product(&self, other: &TermShape) -> TermShape {
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        factors.sort();
        TermShape { factors }
    }

    pub fn eval(&self, config: &BTreeMap<String, f64>) -> Option<f64> {
        let mut v = 1.0;
        for f in &self.factors {
            let &x = config.get(&f.param)?;
            if x <= 0.0 {
                return None;
            }
            v *= f.eval(x);
        }
        Some(v)
    }

    pub fn params(&self) -> Vec<&str> {
        self.factors.iter().map(|f| f.param.as_str()).collect()
    }
}

impl fmt::Display for TermShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "1");
        }
        for (i, factor) in self.factors.iter().enumerate() {
            if i > 0 {
                write!(f, " * ")?;
            }
            write!(f, "{factor}")?;
        }
        Ok(())
    }
}

/// The exponent sets and term budget a search works with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub poly_exponents: Vec<Ratio>,
    pub log_exponents: Vec<u32>,
    pub max_terms: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        let poly = [
            (0, 1),
            (1, 4),
            (1, 3),
            (1, 2),
            (2, 3),
            (3, 4),
            (1, 1),
            (5, 4),
            (4, 3),
            (3, 2),
            (5, 3),
            (7, 4),
            (2, 1),
            (9, 4),
            (5, 2),
            (8, 3),
            (11, 4),
            (3, 1),
        ];
        SearchSpace {
            poly_exponents: poly.iter().map(|&(n, d)| Ratio::new(n, d)).collect(),
            log_exponents: vec![0, 1, 2],
            max_terms: 2,
        }
    }
}

impl SearchSpace {
    /// All non-constant single-parameter shapes: |I|·|J| − 1 of them.
    pub fn single_param_shapes(&self, param: &str) -> Vec<TermShape> {
        let mut out = Vec::new();
        for &poly in &self.poly_exponents {
            for &log in &self.log_exponents {
                if poly.is_zero() && log == 0 {
                    continue;
                }
                out.push(TermShape::single(param, poly, log));
            }
        }
        out
    }

    /// Number of hypotheses for a single parameter: every subset of shapes of
    /// size ≤ max_terms, intercept always included (the empty subset is the
    /// constant model).
    pub fn single_param_hypothesis_count(&self) -> usize {
        let s = self.poly_exponents.len() * self.log_exponents.len() - 1;
        let mut total = 1; // constant
        let mut choose = 1usize;
        for k in 1..=self.max_terms.min(s) {
            choose = choose * (s - k + 1) / k;
            total += choose;
        }
        total
    }
}
