//! Synthetic program corpus and measurement harness.
//!
//! `generate` builds a random-but-reproducible program from a library of
//! archetypes — getters, constant loops, polynomial and logarithmic kernels,
//! additive and multiplicative two-parameter kernels, ratio bounds, branch
//! guards, call chains, and communication wrappers — together with per-
//! function ground truth: the expected classification, the parameters the
//! cost really depends on, and the closed-form cost itself.
//!
//! `synth_measurements` turns a ground-truth formula into CSV-shaped
//! repetitions with multiplicative Gaussian noise (truncated at ±3σ) and an
//! optional contamination factor that grows with a chosen parameter, for
//! exercising the experiment-validity checks.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ast::Program;
use crate::experiment::FunctionClass;
use crate::libdb::LibraryDB;
use crate::measure::{ConfigKey, MeasurementSet};
use crate::model::space::{Ratio, TermShape};
use crate::parser::parse;
use crate::taint::CallPath;
use crate::validate::validate;

/// One additive piece of a ground-truth cost: `coeff · shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTerm {
    pub coeff: f64,
    pub shape: TermShape,
}

/// Closed-form cost: `c0 + Σ coeff · shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFormula {
    pub c0: f64,
    pub terms: Vec<TruthTerm>,
}

impl TruthFormula {
    pub fn constant(c0: f64) -> TruthFormula {
        TruthFormula { c0, terms: Vec::new() }
    }

    pub fn eval(&self, config: &BTreeMap<String, f64>) -> Option<f64> {
        let mut v = self.c0;
        for t in &self.terms {
            v += t.coeff * t.shape.eval(config)?;
        }
        Some(v)
    }
}

/// What the analysis pipeline is expected to conclude about one function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub name: String,
    pub class: FunctionClass,
    /// Parameters the cost genuinely depends on, sorted.
    pub deps: Vec<String>,
    pub formula: TruthFormula,
    /// Drawn from the constant pool (cost independent of every parameter).
    pub constant_pool: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    /// Number of generated functions, excluding the entry.
    pub n_functions: usize,
    /// Fraction (rounded) drawn from the constant pool.
    pub constant_fraction: f64,
    /// Program parameters available to kernels; two-parameter archetypes
    /// need at least two.
    pub params: Vec<String>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 0,
            n_functions: 20,
            constant_fraction: 0.3,
            params: vec!["size".to_string(), "p".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub source: String,
    pub program: Program,
    pub truths: Vec<GroundTruth>,
    pub params: Vec<String>,
    pub n_constant: usize,
}

impl Corpus {
    pub fn truth(&self, name: &str) -> Option<&GroundTruth> {
        self.truths.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("constant fraction {0} is not within [0, 1]")]
    BadFraction(f64),
    #[error("corpus needs at least one function")]
    NoFunctions,
    #[error("corpus needs at least one parameter")]
    NoParams,
    #[error("no value for parameter `{0}` in a measurement config")]
    MissingParam(String),
    #[error("ground-truth formula undefined at config {0} (parameter missing or not positive)")]
    UndefinedTruth(String),
    #[error("contamination parameter `{0}` needs a maximum value above 1")]
    FlatContamination(String),
    #[error("generated program failed its own checks: {0}")]
    GeneratorBug(String),
}

/// Build a corpus from the spec. The same spec always yields byte-identical
/// source and ground truth.
pub fn generate(spec: &CorpusSpec) -> Result<Corpus, SynthError> {
    if !(0.0..=1.0).contains(&spec.constant_fraction) {
        return Err(SynthError::BadFraction(spec.constant_fraction));
    }
    if spec.n_functions == 0 {
        return Err(SynthError::NoFunctions);
    }
    if spec.params.is_empty() {
        return Err(SynthError::NoParams);
    }
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(spec.seed);
    let n_constant = (spec.n_functions as f64 * spec.constant_fraction).round() as usize;
    let n_constant = n_constant.min(spec.n_functions);

    let mut fns: Vec<String> = Vec::new();
    let mut calls: Vec<String> = Vec::new();
    let mut truths: Vec<GroundTruth> = Vec::new();
    let mut idx = 0usize;

    for _ in 0..n_constant {
        emit_constant(&mut rng, &mut idx, &spec.params, &mut fns, &mut calls, &mut truths);
    }
    let mut remaining = spec.n_functions - n_constant;
    while remaining > 0 {
        let emitted = emit_variable(
            &mut rng,
            &mut idx,
            &spec.params,
            remaining,
            &mut fns,
            &mut calls,
            &mut truths,
        );
        remaining -= emitted;
    }

    let mut source = String::new();
    for p in &spec.params {
        source.push_str(&format!("param {p};\n"));
    }
    source.push('\n');
    for f in &fns {
        source.push_str(f);
        source.push('\n');
    }
    source.push_str(&format!("fn main({}) {{\n", spec.params.join(", ")));
    source.push_str("    let acc = 0;\n");
    for c in &calls {
        source.push_str(&format!("    acc = acc + {c};\n"));
    }
    source.push_str("    return acc;\n}\n");

    let program =
        parse(&source).map_err(|e| SynthError::GeneratorBug(format!("parse: {e}")))?;
    let report = validate(&program, &LibraryDB::mpi_default());
    if !report.is_ok() {
        let msgs: Vec<String> = report.errors.iter().map(|e| e.message.clone()).collect();
        return Err(SynthError::GeneratorBug(format!(
            "validation: {}",
            msgs.join("; ")
        )));
    }

    Ok(Corpus {
        source,
        program,
        truths,
        params: spec.params.clone(),
        n_constant,
    })
}

fn pick_param<'a>(rng: &mut ChaCha8Rng, params: &'a [String]) -> &'a str {
    &params[rng.random_range(0..params.len())]
}

fn pick_two<'a>(rng: &mut ChaCha8Rng, params: &'a [String]) -> (&'a str, &'a str) {
    let a = rng.random_range(0..params.len());
    let mut b = rng.random_range(0..params.len() - 1);
    if b >= a {
        b += 1;
    }
    (&params[a], &params[b])
}

fn poly_shape(param: &str, degree: u32) -> TermShape {
    TermShape::single(param, Ratio::new(degree as i32, 1), 0)
}

fn truth_single(c0: f64, coeff: f64, shape: TermShape) -> TruthFormula {
    TruthFormula {
        c0,
        terms: vec![TruthTerm { coeff, shape }],
    }
}

fn emit_constant(
    rng: &mut ChaCha8Rng,
    idx: &mut usize,
    params: &[String],
    fns: &mut Vec<String>,
    calls: &mut Vec<String>,
    truths: &mut Vec<GroundTruth>,
) {
    let i = *idx;
    *idx += 1;
    let kind = rng.random_range(0..4u32);
    match kind {
        0 => {
            let k = rng.random_range(1..100);
            let name = format!("get{i}");
            fns.push(format!("fn {name}() {{\n    return {k};\n}}\n"));
            calls.push(format!("{name}()"));
            truths.push(GroundTruth {
                name,
                class: FunctionClass::StaticallyPruned,
                deps: Vec::new(),
                formula: TruthFormula::constant(2.0),
                constant_pool: true,
            });
        }
        1 => {
            let k = rng.random_range(1..20);
            let name = format!("keep{i}");
            let arg = &params[0];
            fns.push(format!(
                "fn {name}(x) {{\n    let t = x + {k};\n    return t;\n}}\n"
            ));
            calls.push(format!("{name}({arg})"));
            truths.push(GroundTruth {
                name,
                class: FunctionClass::StaticallyPruned,
                deps: Vec::new(),
                formula: TruthFormula::constant(3.0),
                constant_pool: true,
            });
        }
        2 => {
            let k = rng.random_range(4..16);
            let name = format!("warm{i}");
            fns.push(format!(
                "fn {name}() {{\n    let s = 0;\n    for i in 0..{k} {{\n        s = s + i;\n    }}\n    return s;\n}}\n"
            ));
            calls.push(format!("{name}()"));
            truths.push(GroundTruth {
                name,
                class: FunctionClass::StaticallyPruned,
                deps: Vec::new(),
                formula: TruthFormula::constant(k as f64),
                constant_pool: true,
            });
        }
        _ => {
            let k = rng.random_range(4..12);
            let name = format!("spin{i}");
            fns.push(format!(
                "fn {name}() {{\n    let i = 0;\n    while i < {k} {{\n        i = i + 1;\n    }}\n    return i;\n}}\n"
            ));
            calls.push(format!("{name}()"));
            truths.push(GroundTruth {
                name,
                class: FunctionClass::DynamicallyPruned,
                deps: Vec::new(),
                formula: TruthFormula::constant(k as f64),
                constant_pool: true,
            });
        }
    }
}

/// Emit one variable-cost archetype; returns how many functions it added.
fn emit_variable(
    rng: &mut ChaCha8Rng,
    idx: &mut usize,
    params: &[String],
    budget: usize,
    fns: &mut Vec<String>,
    calls: &mut Vec<String>,
    truths: &mut Vec<GroundTruth>,
) -> usize {
    let two_param_ok = params.len() >= 2;
    // 0 poly, 1 log, 2 while-linear, 3 branch, 4 comm, 5 chain,
    // 6 additive, 7 multiplicative, 8 ratio.
    let max_kind = if two_param_ok { 9 } else { 6 };
    let mut kind = rng.random_range(0..max_kind);
    if kind == 5 && budget < 2 {
        kind = 0;
    }
    let i = *idx;
    match kind {
        0 => {
            *idx += 1;
            let n = pick_param(rng, params);
            let degree = rng.random_range(1..=3u32);
            let name = format!("work{i}");
            let mut body = String::from("    let s = 0;\n");
            let mut close = String::new();
            for d in 0..degree {
                let var = ["i", "j", "k"][d as usize];
                let pad = "    ".repeat(d as usize + 1);
                body.push_str(&format!("{pad}for {var} in 0..n {{\n"));
                close = format!("{pad}}}\n{close}");
            }
            body.push_str(&format!(
                "{}s = s + 1;\n",
                "    ".repeat(degree as usize + 1)
            ));
            body.push_str(&close);
            fns.push(format!("fn {name}(n) {{\n{body}    return s;\n}}\n"));
            calls.push(format!("{name}({n})"));
            truths.push(GroundTruth {
                name,
                class: FunctionClass::Kernel,
                deps: vec![n.to_string()],
                formula: truth_single(1.0, 1.0, poly_shape(n, degree)),
                constant_pool: false,
            });
            1
        }
        1 => {
            *idx += 1;
            let n = pick_param(rng, params);
            let name = format!("scan{i}");
            fns.push(format!(
                "fn {name}(n) {{\n    let i = 1;\n    let s = 0;\n    while i < n {{\n        i = i * 2;\n        s = s + 1;\n    }}\n    return s;\n}}\n"
            ));
            calls.push(format!("{name}({n})"));
            truths.push(GroundTruth {
                name,
                class: FunctionClass::Kernel,
                deps: vec![n.to_string()],
                formula: truth_single(1.0, 1.0, TermShape::single(n, Ratio::ZERO, 1)),
                constant_pool: false,
            });
            1
        }
        2 => {
            *idx += 1;
            let n = pick_param(rng, params);
            let s = rng.random_range(2..=4);
            let name = format!("march{i}");
            fns.push(format!(
                "fn {name}(n) {{\n    let i = 0;\n    while i < n {{\n        i = i + {s};\n    }}\n    return i;\n}}\n"
            ));
            calls.push(format!("{name}({n})"));
            truths.push(GroundTruth {
                name,
                class: FunctionClass::Kernel,
                deps: vec![n.to_string()],
                formula: truth_single(1.0, 1.0 / s as f64, poly_shape(n, 1)),
                constant_pool: false,
            });
            1
        }
        3 => {
            *idx += 1;
            let n = pick_param(rng, params);
            let t = rng.random_range(2..=3);
            let name = format!("pick{i}");
            fns.push(format!(
                "fn {name}(n) {{\n    let s = 0;\n    if n > {t} {{\n        for i in 0..n {{\n            s = s + 1;\n        }}\n    }} else {{\n        s = {t};\n    }}\n    return s;\n}}\n"
            ));
            calls.push(format!("{name}({n})"));
            truths.push(GroundTruth {
                name,
                class: FunctionClass::Kernel,
                deps: vec![n.to_string()],
                formula: truth_single(1.0, 1.0, poly_shape(n, 1)),
                constant_pool: false,
            });
            1
        }
        4 => {
            *idx += 1;
            let n = pick_param(rng, params);
            let name = format!("send{i}");
            fns.push(format!(
                "fn {name}(n) {{\n    extern(\"MPI_Send\", 1, n);\n    return 0;\n}}\n"
            ));
            calls.push(format!("{name}({n})"));
            let mut deps = vec![n.to_string(), "p".to_string()];
            deps.sort();
            deps.dedup();
            truths.push(GroundTruth {
                name,
                class: FunctionClass::CommRoutine,
                deps,
                formula: truth_single(2.0, 1.0, poly_shape(n, 1)),
                constant_pool: false,
            });
            1
        }
        5 => {
            let depth = if budget >= 3 && rng.random_range(0..2) == 0 {
                3
            } else {
                2
            };
            let n = pick_param(rng, params);
            let degree = rng.random_range(1..=2u32);
            let outer = format!("relay{}", *idx);
            let core = format!("core{}", *idx + depth - 1);
            let mut chain: Vec<String> = vec![outer.clone()];
            if depth == 3 {
                chain.push(format!("mid{}", *idx + 1));
            }
            chain.push(core.clone());
            *idx += depth;
            for w in chain.windows(2) {
                fns.push(format!(
                    "fn {}(n) {{\n    return {}(n);\n}}\n",
                    w[0], w[1]
                ));
                truths.push(GroundTruth {
                    name: w[0].clone(),
                    class: FunctionClass::DynamicallyPruned,
                    deps: Vec::new(),
                    formula: TruthFormula::constant(1.0),
                    constant_pool: false,
                });
            }
            let mut body = String::from("    let s = 0;\n");
            let mut close = String::new();
            for d in 0..degree {
                let var = ["i", "j"][d as usize];
                let pad = "    ".repeat(d as usize + 1);
                body.push_str(&format!("{pad}for {var} in 0..n {{\n"));
                close = format!("{pad}}}\n{close}");
            }
            body.push_str(&format!(
                "{}s = s + 1;\n",
                "    ".repeat(degree as usize + 1)
            ));
            body.push_str(&close);
            fns.push(format!("fn {core}(n) {{\n{body}    return s;\n}}\n"));
            calls.push(format!("{outer}({n})"));
            truths.push(GroundTruth {
                name: core,
                class: FunctionClass::Kernel,
                deps: vec![n.to_string()],
                formula: truth_single(1.0, 1.0, poly_shape(n, degree)),
                constant_pool: false,
            });
            depth
        }
        6 => {
            *idx += 1;
            let (a, b) = pick_two(rng, params);
            let name = format!("blend{i}");
            fns.push(format!(
                "fn {name}(a, b) {{\n    let s = 0;\n    for i in 0..a {{\n        s = s + 1;\n    }}\n    for j in 0..b {{\n        s = s + 1;\n    }}\n    return s;\n}}\n"
            ));
            calls.push(format!("{name}({a}, {b})"));
            let mut deps = vec![a.to_string(), b.to_string()];
            deps.sort();
            truths.push(GroundTruth {
                name,
                class: FunctionClass::Kernel,
                deps,
                formula: TruthFormula {
                    c0: 1.0,
                    terms: vec![
                        TruthTerm { coeff: 1.0, shape: poly_shape(a, 1) },
                        TruthTerm { coeff: 1.0, shape: poly_shape(b, 1) },
                    ],
                },
                constant_pool: false,
            });
            1
        }
        7 => {
            *idx += 1;
            let (a, b) = pick_two(rng, params);
            let name = format!("cross{i}");
            fns.push(format!(
                "fn {name}(a, b) {{\n    let s = 0;\n    for i in 0..a {{\n        for j in 0..b {{\n            s = s + 1;\n        }}\n    }}\n    return s;\n}}\n"
            ));
            calls.push(format!("{name}({a}, {b})"));
            let mut deps = vec![a.to_string(), b.to_string()];
            deps.sort();
            truths.push(GroundTruth {
                name,
                class: FunctionClass::Kernel,
                deps,
                formula: truth_single(1.0, 1.0, poly_shape(a, 1).product(&poly_shape(b, 1))),
                constant_pool: false,
            });
            1
        }
        _ => {
            *idx += 1;
            let (a, b) = pick_two(rng, params);
            let name = format!("slice{i}");
            fns.push(format!(
                "fn {name}(a, b) {{\n    let r = a / b;\n    let s = 0;\n    for i in 0..r {{\n        s = s + 1;\n    }}\n    return s;\n}}\n"
            ));
            calls.push(format!("{name}({a}, {b})"));
            let mut deps = vec![a.to_string(), b.to_string()];
            deps.sort();
            truths.push(GroundTruth {
                name,
                class: FunctionClass::Kernel,
                deps,
                formula: truth_single(
                    1.0,
                    1.0,
                    poly_shape(a, 1).product(&TermShape::single(b, Ratio::new(-1, 1), 0)),
                ),
                constant_pool: false,
            });
            1
        }
    }
}

/// Multiplies measurements by `1 + amplitude · log₂²(v) / log₂²(v_max)`,
/// where `v` is the config's value of `param`: a runtime perturbation that
/// grows with a parameter the model was told to ignore.
#[derive(Debug, Clone, PartialEq)]
pub struct Contamination {
    pub param: String,
    pub amplitude: f64,
}

/// Append synthetic repetitions for one target. Noise is multiplicative
/// `(1 + ε)` with `ε ~ N(0, σ²)` redrawn beyond ±3σ; `sigma = 0` draws
/// nothing from the generator at all.
#[allow(clippy::too_many_arguments)]
pub fn synth_measurements(
    set: &mut MeasurementSet,
    function: &str,
    call_path: &CallPath,
    truth: &TruthFormula,
    configs: &[BTreeMap<String, f64>],
    reps: usize,
    sigma: f64,
    contamination: Option<&Contamination>,
    rng: &mut ChaCha8Rng,
) -> Result<(), SynthError> {
    let contam_max = match contamination {
        None => 1.0,
        Some(c) => {
            let max = configs
                .iter()
                .filter_map(|cfg| cfg.get(&c.param))
                .fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            if !(max > 1.0) {
                return Err(SynthError::FlatContamination(c.param.clone()));
            }
            let lg = max.log2();
            lg * lg
        }
    };
    let normal = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).expect("sigma is finite and positive"))
    } else {
        None
    };
    for config in configs {
        let base = truth.eval(config).ok_or_else(|| {
            SynthError::UndefinedTruth(ConfigKey::from_map(config).to_string())
        })?;
        let factor = match contamination {
            None => 1.0,
            Some(c) => {
                let v = *config
                    .get(&c.param)
                    .ok_or_else(|| SynthError::MissingParam(c.param.clone()))?;
                let lg = if v > 0.0 { v.log2() } else { 0.0 };
                1.0 + c.amplitude * (lg * lg) / contam_max
            }
        };
        let key = ConfigKey::from_map(config);
        for rep in 0..reps {
            let eps = match &normal {
                None => 0.0,
                Some(dist) => loop {
                    let e = dist.sample(rng);
                    if e.abs() <= 3.0 * sigma {
                        break e;
                    }
                },
            };
            set.insert(function, call_path, key.clone(), rep as u32, base * factor * (1.0 + eps));
        }
    }
    Ok(())
}
