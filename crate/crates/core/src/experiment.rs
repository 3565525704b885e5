//! Experiment design and instrumentation selection.
//!
//! Fitting a model does not require the full cross product of parameter
//! values. Parameters in different dependency groups never interact, so each
//! group gets its own block of configurations while everything else sits at a
//! base value: multiplicative groups keep their internal cross product,
//! additive parameters reduce to one-at-a-time sweeps through a shared base.
//!
//! The same dependency information decides which functions are worth
//! measuring at all: functions that cannot reach a data-dependent loop are
//! pruned statically, functions whose loops never pick up parameter labels at
//! runtime are pruned dynamically, and the rest are classified by what their
//! cost depends on.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::ast::{for_each_expr_in_stmt, for_each_stmt, ExprKind, Program, StmtKind};
use crate::label::LabelSet;
use crate::libdb::LibraryDB;
use crate::measure::ConfigKey;
use crate::taint::TraceReport;
use crate::validate::validate;
use crate::volume::{DepGroup, Relation};

pub const SCHEMA_VERSION: u32 = 1;

/// The reduced set of configurations to measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub schema_version: u32,
    /// Parameters that vary across configurations, sorted.
    pub varied: Vec<String>,
    /// Parameters held at their base value throughout, sorted.
    pub pinned: Vec<String>,
    /// The shared base configuration (every parameter at its smallest value).
    pub base: BTreeMap<String, f64>,
    pub configs: Vec<BTreeMap<String, f64>>,
    pub n_configs: usize,
    /// Size of the full cross product over the varied parameters, for
    /// comparison against `n_configs`.
    pub full_factorial_size: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum DesignError {
    #[error("no value grid given for parameter `{0}`")]
    MissingGrid(String),
    #[error("value grid for parameter `{0}` is empty")]
    EmptyGrid(String),
}

/// Reduce per-parameter value grids to a measurement plan for the given
/// dependency groups. Grid values are sorted and deduplicated; the smallest
/// value of each grid becomes its base.
pub fn design(
    groups: &[DepGroup],
    grids: &BTreeMap<String, Vec<f64>>,
) -> Result<ExperimentDesign, DesignError> {
    let mut norm: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (param, values) in grids {
        let mut v: Vec<f64> = values.clone();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| a.total_cmp(b).is_eq());
        if v.is_empty() {
            return Err(DesignError::EmptyGrid(param.clone()));
        }
        norm.insert(param.clone(), v);
    }

    let varied: BTreeSet<String> = groups
        .iter()
        .flat_map(|g| g.params.iter().cloned())
        .collect();
    for p in &varied {
        if !norm.contains_key(p) {
            return Err(DesignError::MissingGrid(p.clone()));
        }
    }
    let base: BTreeMap<String, f64> = norm.iter().map(|(k, v)| (k.clone(), v[0])).collect();
    let pinned: Vec<String> = norm
        .keys()
        .filter(|k| !varied.contains(*k))
        .cloned()
        .collect();

    let mut configs: Vec<BTreeMap<String, f64>> = Vec::new();
    let mut seen: BTreeSet<ConfigKey> = BTreeSet::new();
    let push = |cfg: BTreeMap<String, f64>,
                    configs: &mut Vec<BTreeMap<String, f64>>,
                    seen: &mut BTreeSet<ConfigKey>| {
        if seen.insert(ConfigKey::from_map(&cfg)) {
            configs.push(cfg);
        }
    };

    if varied.is_empty() {
        push(base.clone(), &mut configs, &mut seen);
    }
    for group in groups {
        match group.relation {
            Relation::Multiplicative => {
                let members = &group.params;
                for combo in members
                    .iter()
                    .map(|p| norm[p].iter().copied())
                    .multi_cartesian_product()
                {
                    let mut cfg = base.clone();
                    for (p, v) in members.iter().zip(combo) {
                        cfg.insert(p.clone(), v);
                    }
                    push(cfg, &mut configs, &mut seen);
                }
            }
            Relation::Additive => {
                for p in &group.params {
                    for v in &norm[p] {
                        let mut cfg = base.clone();
                        cfg.insert(p.clone(), *v);
                        push(cfg, &mut configs, &mut seen);
                    }
                }
            }
        }
    }

    let full_factorial_size = varied
        .iter()
        .map(|p| norm[p].len() as u64)
        .fold(1u64, u64::saturating_mul);
    Ok(ExperimentDesign {
        schema_version: SCHEMA_VERSION,
        varied: varied.into_iter().collect(),
        pinned,
        base,
        n_configs: configs.len(),
        configs,
        full_factorial_size,
    })
}

/// What a function's measured cost can depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionClass {
    /// Cannot reach a data-dependent loop or a relevant library call: its
    /// cost is a compile-time constant. Skipped without running anything.
    StaticallyPruned,
    /// Could have mattered, but no parameter label reached its loops,
    /// branches, or library calls in the observed run.
    DynamicallyPruned,
    /// Has loops or branches whose behavior depends on parameters.
    Kernel,
    /// No parameter-dependent loops of its own, but calls library routines
    /// whose cost depends on parameters.
    CommRoutine,
    /// A library routine itself, described by the database.
    Extern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionReport {
    pub name: String,
    pub class: FunctionClass,
    /// Parameters observed on loop trip counts inside this function.
    pub loop_params: Vec<String>,
    /// Parameters observed on branch conditions inside this function.
    pub branch_params: Vec<String>,
    /// Parameters observed on library-call dependency atoms.
    pub extern_params: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub schema_version: u32,
    pub entry: String,
    pub functions: Vec<FunctionReport>,
    /// Names worth instrumenting: every kernel and comm routine.
    pub instrument: Vec<String>,
}

/// Classify every function (and every referenced library routine) by how its
/// cost can vary, combining a static reachability pass with the labels the
/// trace actually observed.
pub fn classify(program: &Program, db: &LibraryDB, trace: &TraceReport) -> ClassificationReport {
    let validation = validate(program, db);

    // Static pass: which functions contain a non-constant loop or a relevant
    // library call, and who calls whom.
    let mut own_relevant: BTreeMap<String, bool> = BTreeMap::new();
    let mut callees: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut extern_refs: BTreeSet<String> = BTreeSet::new();
    for func in &program.functions {
        let mut own = false;
        let mut called = BTreeSet::new();
        for_each_stmt(&func.body, &mut |stmt| {
            match &stmt.kind {
                StmtKind::While { .. } => own = true,
                StmtKind::For { .. } if !validation.constant_loops.contains_key(&stmt.id) => {
                    own = true;
                }
                _ => {}
            }
            for_each_expr_in_stmt(stmt, &mut |expr| match &expr.kind {
                ExprKind::Call { name, .. } => {
                    called.insert(name.clone());
                }
                ExprKind::Extern { name, .. } => {
                    extern_refs.insert(name.clone());
                    if db.get(name).map(|e| e.is_relevant()).unwrap_or(false) {
                        own = true;
                    }
                }
                _ => {}
            });
        });
        own_relevant.insert(func.name.clone(), own);
        callees.insert(func.name.clone(), called);
    }

    // Fixpoint: relevance flows from callee to caller.
    let mut relevant: BTreeMap<String, bool> = own_relevant.clone();
    loop {
        let mut changed = false;
        for func in &program.functions {
            if relevant[&func.name] {
                continue;
            }
            if callees[&func.name]
                .iter()
                .any(|c| relevant.get(c).copied().unwrap_or(false))
            {
                relevant.insert(func.name.clone(), true);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Dynamic pass: attribute trace records to the function owning each frame.
    let mut frame_fn: BTreeMap<&crate::taint::CallPath, &str> = BTreeMap::new();
    for frame in &trace.frames {
        frame_fn.insert(&frame.call_path, &frame.function);
    }
    let mut loop_params: BTreeMap<&str, LabelSet> = BTreeMap::new();
    let mut branch_params: BTreeMap<&str, LabelSet> = BTreeMap::new();
    let mut extern_params: BTreeMap<&str, LabelSet> = BTreeMap::new();
    for rec in &trace.loops {
        if let Some(f) = frame_fn.get(&rec.call_path) {
            let set = loop_params.entry(f).or_default();
            for label in &rec.labels {
                set.insert(label.clone());
            }
        }
    }
    for rec in &trace.branches {
        if let Some(f) = frame_fn.get(&rec.call_path) {
            let set = branch_params.entry(f).or_default();
            for label in &rec.labels {
                set.insert(label.clone());
            }
        }
    }
    let mut extern_observed: BTreeMap<&str, LabelSet> = BTreeMap::new();
    for rec in &trace.extern_calls {
        let labels: LabelSet = rec
            .atoms
            .iter()
            .flat_map(|atom| atom.iter().map(String::from))
            .collect();
        if let Some(f) = frame_fn.get(&rec.call_path) {
            extern_params.entry(f).or_default().union_with(&labels);
        }
        extern_observed
            .entry(rec.name.as_str())
            .or_default()
            .union_with(&labels);
    }

    let mut functions = Vec::new();
    for func in &program.functions {
        let name = func.name.as_str();
        let loops = loop_params.get(name).cloned().unwrap_or_default();
        let branches = branch_params.get(name).cloned().unwrap_or_default();
        let externs = extern_params.get(name).cloned().unwrap_or_default();
        let class = if !relevant[name] {
            FunctionClass::StaticallyPruned
        } else if !loops.is_empty() || !branches.is_empty() {
            FunctionClass::Kernel
        } else if !externs.is_empty() {
            FunctionClass::CommRoutine
        } else {
            FunctionClass::DynamicallyPruned
        };
        functions.push(FunctionReport {
            name: name.to_string(),
            class,
            loop_params: loops.to_vec(),
            branch_params: branches.to_vec(),
            extern_params: externs.to_vec(),
        });
    }
    for name in &extern_refs {
        let observed = extern_observed.get(name.as_str()).cloned().unwrap_or_default();
        functions.push(FunctionReport {
            name: name.clone(),
            class: FunctionClass::Extern,
            loop_params: Vec::new(),
            branch_params: Vec::new(),
            extern_params: observed.to_vec(),
        });
    }
    functions.sort_by(|a, b| a.name.cmp(&b.name));

    let instrument: Vec<String> = functions
        .iter()
        .filter(|f| matches!(f.class, FunctionClass::Kernel | FunctionClass::CommRoutine))
        .map(|f| f.name.clone())
        .collect();

    ClassificationReport {
        schema_version: SCHEMA_VERSION,
        entry: program.entry.clone(),
        functions,
        instrument,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::taint::{run, RunOptions};

    fn grid(name: &str, values: &[f64]) -> (String, Vec<f64>) {
        (name.to_string(), values.to_vec())
    }

    fn additive(params: &[&str]) -> Vec<DepGroup> {
        params
            .iter()
            .map(|p| DepGroup {
                params: vec![p.to_string()],
                relation: Relation::Additive,
                over_approx: false,
            })
            .collect()
    }

    #[test]
    fn two_additive_params_sweep_through_a_shared_base() {
        let grids = BTreeMap::from([
            grid("p", &[1.0, 2.0, 4.0, 8.0, 16.0]),
            grid("size", &[10.0, 20.0, 30.0, 40.0, 50.0]),
        ]);
        let d = design(&additive(&["p", "size"]), &grids).unwrap();
        assert_eq!(d.n_configs, 9); // 5 + 5 − shared base
        assert_eq!(d.full_factorial_size, 25);
        assert_eq!(d.base["p"], 1.0);
        assert_eq!(d.base["size"], 10.0);
        // Every config differs from base in at most one parameter.
        for cfg in &d.configs {
            let moved = cfg.iter().filter(|(k, v)| d.base[*k] != **v).count();
            assert!(moved <= 1);
        }
    }

    #[test]
    fn three_additive_params_reduce_to_thirteen_configs() {
        let grids = BTreeMap::from([
            grid("a", &[1.0, 2.0, 3.0, 4.0, 5.0]),
            grid("b", &[1.0, 2.0, 3.0, 4.0, 5.0]),
            grid("c", &[1.0, 2.0, 3.0, 4.0, 5.0]),
        ]);
        let d = design(&additive(&["a", "b", "c"]), &grids).unwrap();
        assert_eq!(d.n_configs, 13); // 3·5 − 2 repeat bases
        assert_eq!(d.full_factorial_size, 125);
    }

    #[test]
    fn multiplicative_group_keeps_its_cross_product() {
        let grids = BTreeMap::from([
            grid("p", &[1.0, 2.0, 4.0, 8.0, 16.0]),
            grid("size", &[10.0, 20.0, 30.0, 40.0, 50.0]),
        ]);
        let groups = vec![DepGroup {
            params: vec!["p".to_string(), "size".to_string()],
            relation: Relation::Multiplicative,
            over_approx: false,
        }];
        let d = design(&groups, &grids).unwrap();
        assert_eq!(d.n_configs, 25);
        assert_eq!(d.full_factorial_size, 25);
    }

    #[test]
    fn mixed_groups_share_one_base_and_unvaried_params_stay_pinned() {
        let grids = BTreeMap::from([
            grid("a", &[1.0, 2.0, 3.0]),
            grid("b", &[1.0, 2.0, 3.0]),
            grid("c", &[1.0, 2.0, 3.0]),
            grid("d", &[7.0, 9.0]),
        ]);
        let mut groups = vec![DepGroup {
            params: vec!["a".to_string(), "b".to_string()],
            relation: Relation::Multiplicative,
            over_approx: false,
        }];
        groups.extend(additive(&["c"]));
        let d = design(&groups, &grids).unwrap();
        assert_eq!(d.n_configs, 11); // 9 + 3 − shared base
        assert_eq!(d.pinned, vec!["d".to_string()]);
        assert!(d.configs.iter().all(|cfg| cfg["d"] == 7.0));
        assert_eq!(d.full_factorial_size, 27);
    }

    #[test]
    fn grids_are_sorted_and_deduplicated_before_use() {
        let grids = BTreeMap::from([grid("n", &[8.0, 2.0, 4.0, 2.0])]);
        let d = design(&additive(&["n"]), &grids).unwrap();
        assert_eq!(d.base["n"], 2.0);
        assert_eq!(d.n_configs, 3);
    }

    #[test]
    fn missing_grid_for_a_varied_param_is_an_error() {
        let grids = BTreeMap::from([grid("n", &[2.0])]);
        assert!(matches!(
            design(&additive(&["m"]), &grids),
            Err(DesignError::MissingGrid(p)) if p == "m"
        ));
    }

    const CLASSIFY_SOURCE: &str = r#"
param size;
param p;

fn get_flag() {
    return 1;
}

fn setup() {
    let acc = 0;
    for i in 0..4 {
        acc = acc + i;
    }
    return acc;
}

fn local_work() {
    let i = 0;
    let k = 3;
    while i < k {
        i = i + 1;
    }
    return i;
}

fn kernel(n) {
    let acc = 0;
    for i in 0..n {
        acc = acc + 1;
    }
    return acc;
}

fn comm(n) {
    extern("MPI_Send", 1, n);
    return 0;
}

fn main(size, p) {
    let a = get_flag();
    let b = setup();
    let c = local_work();
    let d = kernel(size);
    let e = comm(size);
    return d + e;
}
"#;

    fn classified() -> ClassificationReport {
        let program = parse(CLASSIFY_SOURCE).unwrap();
        let db = LibraryDB::mpi_default();
        let params = BTreeMap::from([("size".to_string(), 8.0), ("p".to_string(), 4.0)]);
        let trace = run(&program, &db, &params, &RunOptions::default()).unwrap();
        classify(&program, &db, &trace)
    }

    #[test]
    fn classes_separate_pruned_kernel_and_comm_functions() {
        let report = classified();
        let class = |name: &str| {
            report
                .functions
                .iter()
                .find(|f| f.name == name)
                .unwrap_or_else(|| panic!("missing {name}"))
                .class
        };
        assert_eq!(class("get_flag"), FunctionClass::StaticallyPruned);
        assert_eq!(class("setup"), FunctionClass::StaticallyPruned);
        assert_eq!(class("local_work"), FunctionClass::DynamicallyPruned);
        assert_eq!(class("kernel"), FunctionClass::Kernel);
        assert_eq!(class("comm"), FunctionClass::CommRoutine);
        assert_eq!(class("main"), FunctionClass::DynamicallyPruned);
        assert_eq!(class("MPI_Send"), FunctionClass::Extern);
    }

    #[test]
    fn instrumentation_filter_keeps_only_kernels_and_comm_routines() {
        let report = classified();
        assert_eq!(report.instrument, vec!["comm", "kernel"]);
    }

    #[test]
    fn observed_params_land_on_the_right_functions() {
        let report = classified();
        let find = |name: &str| report.functions.iter().find(|f| f.name == name).unwrap();
        assert_eq!(find("kernel").loop_params, vec!["size"]);
        assert_eq!(find("comm").extern_params, vec!["p", "size"]);
        assert_eq!(find("MPI_Send").extern_params, vec!["p", "size"]);
        assert!(find("main").loop_params.is_empty());
    }

    #[test]
    fn classification_report_serializes_deterministically() {
        let a = serde_json::to_string_pretty(&classified()).unwrap();
        let b = serde_json::to_string_pretty(&classified()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"statically_pruned\""));
        assert!(a.contains("\"schema_version\": 1"));
    }
}
