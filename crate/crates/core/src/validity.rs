//! Post-hoc checks that a measured experiment can be trusted.
//!
//! Three failure modes are detected after the fact:
//!
//! * **Noisy repetitions** — configurations whose repetition CoV exceeds the
//!   threshold (same rule as the ingest filter, re-checked here).
//! * **Contention** — a parameter the analysis excluded from the model shows
//!   a strong monotone association with runtime anyway (rank correlation
//!   over its swept values), meaning the run was perturbed by something the
//!   program text cannot see, e.g. shared-resource contention.
//! * **Behavior change** — the chosen model fits poorly overall, but
//!   splitting the configurations at some parameter value yields two ranges
//!   that each fit well on their own: the code switches regimes mid-range,
//!   and one formula cannot cover both sides.
//!
//! Tainted branches that never took one of their sides are reported as
//! design warnings: the measurements cannot distinguish behavior the run
//! never exercised.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ast::NodeId;
use crate::measure::{cov, CovViolation, MeasurementSet, TargetKey};
use crate::model::fit::{median, DataPoint};
use crate::model::{select_guided, PerfModel, SearchSpace};
use crate::taint::{CallPath, TraceReport};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityOptions {
    /// Repetition CoV above this is a violation.
    pub cov_threshold: f64,
    /// |Spearman ρ| at or above this flags an excluded parameter.
    pub spearman_threshold: f64,
    /// Minimum distinct excluded-parameter values before rank correlation
    /// is meaningful.
    pub min_values: usize,
    /// Model CV-SMAPE above this triggers the behavior-change scan.
    pub smape_threshold: f64,
    /// Minimum configurations on each side of a candidate split.
    pub min_side: usize,
}

impl Default for ValidityOptions {
    fn default() -> Self {
        ValidityOptions {
            cov_threshold: 0.1,
            spearman_threshold: 0.8,
            min_values: 5,
            smape_threshold: 0.15,
            min_side: 3,
        }
    }
}

/// An excluded parameter that correlates with runtime anyway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentionFlag {
    pub param: String,
    pub rho: f64,
    pub n_values: usize,
}

/// A parameter split where two separate fits beat the single model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorChange {
    pub param: String,
    /// Midpoint between the last value on the left and the first on the
    /// right: the regime boundary lies somewhere in between.
    pub split_at: f64,
    pub full_cv: f64,
    pub left_cv: f64,
    pub right_cv: f64,
    pub left_n: usize,
    pub right_n: usize,
}

/// A tainted branch the run only ever saw from one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchWarning {
    pub node_id: NodeId,
    pub call_path: CallPath,
    pub labels: Vec<String>,
    /// "always_taken" or "never_taken".
    pub observed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub schema_version: u32,
    pub function: String,
    pub call_path: CallPath,
    pub options: ValidityOptions,
    pub cov_violations: Vec<CovViolation>,
    /// Parameters present in the measurements but absent from the model's
    /// dependency set — the ones the contention check watches.
    pub excluded_params: Vec<String>,
    pub contention: Vec<ContentionFlag>,
    pub behavior_changes: Vec<BehaviorChange>,
    pub branch_warnings: Vec<BranchWarning>,
    pub ok: bool,
}

/// Tie-averaged ranks (1-based): equal values share the mean of the rank
/// positions they occupy.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len()
            && values[order[j + 1]].total_cmp(&values[order[i]]).is_eq()
        {
            j += 1;
        }
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either side has no rank variance.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in rx.iter().zip(&ry) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Check one measured target against its chosen model.
#[allow(clippy::too_many_arguments)]
pub fn validate_experiment(
    set: &MeasurementSet,
    target: &TargetKey,
    model: &PerfModel,
    deps: &[String],
    groups: &[Vec<String>],
    space: &SearchSpace,
    trace: Option<&TraceReport>,
    opts: &ValidityOptions,
) -> ValidityReport {
    let mut cov_violations = Vec::new();
    for config in set.configs(target) {
        let values = set.reps(target, config);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        match cov(&values) {
            Some(c) if c <= opts.cov_threshold => {}
            Some(c) => cov_violations.push(CovViolation {
                function: target.0.clone(),
                call_path: target.1.clone(),
                config: config.to_map(),
                cov: c,
                mean,
                n_reps: values.len(),
                reason: format!("CoV {c:.4} exceeds threshold {}", opts.cov_threshold),
            }),
            None => cov_violations.push(CovViolation {
                function: target.0.clone(),
                call_path: target.1.clone(),
                config: config.to_map(),
                cov: f64::INFINITY,
                mean,
                n_reps: values.len(),
                reason: "repetitions spread around a zero mean".to_string(),
            }),
        }
    }

    let points = set.data_points(target);
    let excluded_params: Vec<String> = set
        .params
        .iter()
        .filter(|p| !deps.contains(p))
        .cloned()
        .collect();

    let mut contention = Vec::new();
    for param in &excluded_params {
        // One point per distinct value: the median of per-config medians.
        let mut by_value: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
        for point in &points {
            let Some(v) = point.config.get(param) else {
                continue;
            };
            by_value
                .entry(v.to_bits())
                .or_insert((*v, Vec::new()))
                .1
                .push(point.y);
        }
        if by_value.len() < opts.min_values {
            continue;
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (_, (v, group)) in by_value {
            xs.push(v);
            ys.push(median(&group));
        }
        if let Some(rho) = spearman(&xs, &ys) {
            if rho.abs() >= opts.spearman_threshold {
                contention.push(ContentionFlag {
                    param: param.clone(),
                    rho,
                    n_values: xs.len(),
                });
            }
        }
    }

    let mut behavior_changes = Vec::new();
    if model.cv_smape > opts.smape_threshold {
        for param in deps {
            let mut values: Vec<f64> = points
                .iter()
                .filter_map(|p| p.config.get(param).copied())
                .collect();
            values.sort_by(f64::total_cmp);
            values.dedup_by(|a, b| a.total_cmp(b).is_eq());
            if values.len() < 2 {
                continue;
            }
            let mut best: Option<BehaviorChange> = None;
            for k in 1..values.len() {
                let threshold = (values[k - 1] + values[k]) / 2.0;
                let (left, right): (Vec<DataPoint>, Vec<DataPoint>) = points
                    .iter()
                    .cloned()
                    .partition(|p| p.config.get(param).copied().unwrap_or(f64::NAN) < threshold);
                if left.len() < opts.min_side || right.len() < opts.min_side {
                    continue;
                }
                let left_fit = select_guided(deps, groups, space, &left);
                let right_fit = select_guided(deps, groups, space, &right);
                if left_fit.cv_smape < model.cv_smape / 2.0
                    && right_fit.cv_smape < model.cv_smape / 2.0
                {
                    let candidate = BehaviorChange {
                        param: param.clone(),
                        split_at: threshold,
                        full_cv: model.cv_smape,
                        left_cv: left_fit.cv_smape,
                        right_cv: right_fit.cv_smape,
                        left_n: left.len(),
                        right_n: right.len(),
                    };
                    let better = match &best {
                        None => true,
                        Some(b) => {
                            candidate.left_cv.max(candidate.right_cv)
                                < b.left_cv.max(b.right_cv)
                        }
                    };
                    if better {
                        best = Some(candidate);
                    }
                }
            }
            if let Some(b) = best {
                behavior_changes.push(b);
            }
        }
    }

    let mut branch_warnings = Vec::new();
    if let Some(trace) = trace {
        for rec in &trace.branches {
            if rec.labels.is_empty() {
                continue;
            }
            let observed = if rec.not_taken == 0 {
                "always_taken"
            } else if rec.taken == 0 {
                "never_taken"
            } else {
                continue;
            };
            branch_warnings.push(BranchWarning {
                node_id: rec.node_id,
                call_path: rec.call_path.clone(),
                labels: rec.labels.clone(),
                observed: observed.to_string(),
            });
        }
    }

    let ok = cov_violations.is_empty() && contention.is_empty() && behavior_changes.is_empty();
    ValidityReport {
        schema_version: SCHEMA_VERSION,
        function: target.0.clone(),
        call_path: target.1.clone(),
        options: opts.clone(),
        cov_violations,
        excluded_params,
        contention,
        behavior_changes,
        branch_warnings,
        ok,
    }
}
