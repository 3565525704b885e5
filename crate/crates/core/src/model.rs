//! Performance-model fitting: search space, least squares, selection.
//!
//! The fitted form is a sum of terms plus an intercept, each term a product
//! of `param^i * log2(param)^j` factors with exponents from a fixed menu.
//! [`select::select_guided`] uses taint-derived structure to keep the
//! hypothesis set small and honest; [`select::select_blackbox`] searches
//! without that knowledge, for comparison.

pub mod fit;
pub mod select;
pub mod space;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use fit::DataPoint;
pub use select::{select_blackbox, select_guided};
pub use space::{Ratio, SearchSpace, TermShape};

pub const SCHEMA_VERSION: u32 = 1;

/// Which pipeline produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Guided,
    Blackbox,
}

/// One fitted term: coefficient times shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTerm {
    pub coeff: f64,
    pub shape: TermShape,
}

/// A fitted performance model for one function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfModel {
    pub schema_version: u32,
    pub mode: Mode,
    pub intercept: f64,
    pub terms: Vec<ModelTerm>,
    /// Mean leave-one-config-out SMAPE, in [0, 2].
    pub cv_smape: f64,
    pub n_configs: usize,
    /// Human-readable formula, e.g. `2.86 * log2(r)^2 + 127`.
    pub formula: String,
}

impl PerfModel {
    pub fn assemble(
        mode: Mode,
        intercept: f64,
        terms: Vec<ModelTerm>,
        cv_smape: f64,
        n_configs: usize,
    ) -> PerfModel {
        let mut m = PerfModel {
            schema_version: SCHEMA_VERSION,
            mode,
            intercept,
            terms,
            cv_smape,
            n_configs,
            formula: String::new(),
        };
        m.formula = m.render_formula();
        m
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn predict(&self, config: &BTreeMap<String, f64>) -> Option<f64> {
        let mut v = self.intercept;
        for t in &self.terms {
            v += t.coeff * t.shape.eval(config)?;
        }
        Some(v)
    }

    /// All parameters the model actually uses.
    pub fn params(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .terms
            .iter()
            .flat_map(|t| t.shape.params())
            .map(String::from)
            .collect();
        out.sort();
        out.dedup();
        out
    }

    fn render_formula(&self) -> String {
        let mut parts = Vec::new();
        for t in &self.terms {
            parts.push(format!("{} * {}", fmt_coeff(t.coeff.abs()), t.shape));
        }
        let signs: Vec<bool> = self.terms.iter().map(|t| t.coeff < 0.0).collect();
        let mut s = String::new();
        for (i, part) in parts.iter().enumerate() {
            if i == 0 {
                if signs[i] {
                    s.push('-');
                }
            } else {
                s.push_str(if signs[i] { " - " } else { " + " });
            }
            s.push_str(part);
        }
        if self.terms.is_empty() {
            return fmt_coeff(self.intercept);
        }
        if self.intercept != 0.0 {
            s.push_str(if self.intercept < 0.0 { " - " } else { " + " });
            s.push_str(&fmt_coeff(self.intercept.abs()));
        }
        s
    }
}

impl fmt::Display for PerfModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.formula)
    }
}

/// Six significant digits, trailing zeros trimmed; scientific notation
/// outside comfortable magnitudes.
fn fmt_coeff(c: f64) -> String {
    if c == 0.0 {
        return "0".to_string();
    }
    let mag = c.abs();
    if (1e-4..1e7).contains(&mag) {
        let digits_before = mag.log10().floor().max(0.0) as usize + 1;
        let decimals = 6usize.saturating_sub(digits_before);
        let s = format!("{c:.decimals$}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        let s = format!("{c:.5e}");
        // Trim mantissa zeros: 2.40000e-8 → 2.4e-8.
        match s.split_once('e') {
            Some((mant, exp)) => {
                let mant = mant.trim_end_matches('0').trim_end_matches('.');
                format!("{mant}e{exp}")
            }
            None => s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::space::Ratio;
    use super::*;

    fn sample_model() -> PerfModel {
        PerfModel::assemble(
            Mode::Guided,
            127.0,
            vec![ModelTerm {
                coeff: 2.86,
                shape: TermShape::single("r", Ratio::ZERO, 2),
            }],
            0.0,
            8,
        )
    }

    #[test]
    fn formula_reads_naturally() {
        assert_eq!(sample_model().formula, "2.86 * log2(r)^2 + 127");
    }

    #[test]
    fn negative_coefficients_render_as_subtraction() {
        let m = PerfModel::assemble(
            Mode::Guided,
            -3.0,
            vec![
                ModelTerm {
                    coeff: 2.0,
                    shape: TermShape::single("n", Ratio::new(1, 1), 0),
                },
                ModelTerm {
                    coeff: -0.5,
                    shape: TermShape::single("n", Ratio::new(1, 2), 0),
                },
            ],
            0.1,
            10,
        );
        assert_eq!(m.formula, "2 * n - 0.5 * n^(1/2) - 3");
    }

    #[test]
    fn coefficient_formatting_covers_magnitudes() {
        assert_eq!(fmt_coeff(127.0), "127");
        assert_eq!(fmt_coeff(2.86), "2.86");
        assert_eq!(fmt_coeff(0.003), "0.003");
        assert_eq!(fmt_coeff(2.4e-8), "2.4e-8");
        assert_eq!(fmt_coeff(1.23456789e9), "1.23457e9");
    }

    #[test]
    fn predictions_apply_every_term_and_intercept() {
        let m = sample_model();
        let at = |v: f64| m.predict(&BTreeMap::from([("r".to_string(), v)])).unwrap();
        assert!((at(2.0) - 129.86).abs() < 1e-12);
        assert!((at(16.0) - 172.76).abs() < 1e-12);
    }

    #[test]
    fn model_json_round_trips() {
        let m = sample_model();
        let json = serde_json::to_string_pretty(&m).unwrap();
        let back: PerfModel = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }
}
