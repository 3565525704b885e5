//! Cross-module invariants checked over generated inputs.

use std::collections::BTreeMap;

use proptest::prelude::*;

use ptl_core::ast::ast_eq;
use ptl_core::experiment::{classify, design, FunctionClass};
use ptl_core::label::LabelSet;
use ptl_core::libdb::LibraryDB;
use ptl_core::measure::{cov_filter, ConfigKey, MeasurementSet};
use ptl_core::model::{select_guided, DataPoint, SearchSpace};
use ptl_core::parser::parse;
use ptl_core::pretty::print_program;
use ptl_core::synth::{generate, CorpusSpec};
use ptl_core::taint::{run, CallPath, RunOptions};
use ptl_core::volume::{DepGroup, Relation, UnresolvedOrigin, VolumeExpr};

fn label_set() -> impl Strategy<Value = LabelSet> {
    proptest::collection::vec(prop_oneof!["a", "b", "c", "d", "e"], 0..5)
        .prop_map(|v| v.into_iter().collect())
}

proptest! {
    #[test]
    fn label_union_is_idempotent_commutative_associative(
        a in label_set(),
        b in label_set(),
        c in label_set(),
    ) {
        prop_assert_eq!(a.clone().union(&a), a.clone());
        prop_assert_eq!(a.clone().union(&b), b.clone().union(&a));
        let left = a.clone().union(&b).union(&c);
        let right = a.clone().union(&b.clone().union(&c));
        prop_assert_eq!(left, right);
    }

    #[test]
    fn label_difference_then_union_restores_nothing_extra(
        a in label_set(),
        b in label_set(),
    ) {
        let diff = a.difference(&b);
        prop_assert!(diff.is_subset(&a));
        for l in diff.iter() {
            prop_assert!(!b.contains(l));
        }
        prop_assert_eq!(diff.union(&b), a.union(&b));
    }
}

fn volume_expr() -> impl Strategy<Value = VolumeExpr> {
    let leaf = prop_oneof![
        (0u32..5).prop_map(|k| VolumeExpr::Const(k as f64)),
        ((0u32..40), label_set(), proptest::bool::ANY).prop_map(|(id, params, multi)| {
            VolumeExpr::Unresolved {
                origin: UnresolvedOrigin::Loop {
                    node_id: id,
                    call_path: CallPath::root(),
                },
                params,
                multi_source: multi,
            }
        }),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 0..4).prop_map(VolumeExpr::Sum),
            proptest::collection::vec(inner, 0..4).prop_map(VolumeExpr::Product),
        ]
    })
}

proptest! {
    #[test]
    fn volume_normalization_is_idempotent(e in volume_expr()) {
        let once = e.normalize();
        let twice = once.clone().normalize();
        prop_assert_eq!(once, twice);
    }
}

fn corpus_spec() -> impl Strategy<Value = CorpusSpec> {
    (0u64..500, 4usize..12, 0u32..=10).prop_map(|(seed, n, tenths)| CorpusSpec {
        seed,
        n_functions: n,
        constant_fraction: tenths as f64 / 10.0,
        ..CorpusSpec::default()
    })
}

fn base_params() -> BTreeMap<String, f64> {
    BTreeMap::from([("size".to_string(), 6.0), ("p".to_string(), 4.0)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn printing_then_parsing_is_the_identity(spec in corpus_spec()) {
        let corpus = generate(&spec).unwrap();
        let printed = print_program(&corpus.program);
        let reparsed = parse(&printed).unwrap();
        prop_assert!(ast_eq(&corpus.program, &reparsed));
        prop_assert_eq!(print_program(&reparsed), printed);
    }

    #[test]
    fn taint_runs_are_deterministic(spec in corpus_spec()) {
        let corpus = generate(&spec).unwrap();
        let db = LibraryDB::mpi_default();
        let opts = RunOptions::default();
        let a = run(&corpus.program, &db, &base_params(), &opts).unwrap();
        let b = run(&corpus.program, &db, &base_params(), &opts).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn classification_partitions_every_function(spec in corpus_spec()) {
        let corpus = generate(&spec).unwrap();
        let db = LibraryDB::mpi_default();
        let trace = run(&corpus.program, &db, &base_params(), &RunOptions::default()).unwrap();
        let report = classify(&corpus.program, &db, &trace);
        // Every program function appears exactly once.
        let mut names: Vec<&str> = report.functions.iter().map(|f| f.name.as_str()).collect();
        names.sort();
        names.dedup();
        prop_assert_eq!(names.len(), report.functions.len(), "duplicate classification rows");
        for func in &corpus.program.functions {
            prop_assert!(
                report.functions.iter().any(|f| f.name == func.name),
                "function {} missing from classification", func.name
            );
        }
        // The instrumentation list is exactly the kernel and comm rows.
        for f in &report.functions {
            let listed = report.instrument.contains(&f.name);
            let expected = matches!(f.class, FunctionClass::Kernel | FunctionClass::CommRoutine);
            prop_assert_eq!(listed, expected, "instrument mismatch for {}", &f.name);
        }
    }
}

fn measurement_set() -> impl Strategy<Value = MeasurementSet> {
    proptest::collection::vec(
        (
            1u32..5,                                       // config id → value 2^id
            proptest::collection::vec(1.0f64..100.0, 1..6), // reps
        ),
        1..6,
    )
    .prop_map(|configs| {
        let mut set = MeasurementSet::new(vec!["n".to_string()]);
        for (i, (id, reps)) in configs.into_iter().enumerate() {
            let key = ConfigKey::from_map(&BTreeMap::from([(
                "n".to_string(),
                f64::from(1u32 << id) + i as f64,
            )]));
            for (rep, v) in reps.iter().enumerate() {
                set.insert("main", &CallPath::root(), key.clone(), rep as u32, *v);
            }
        }
        set
    })
}

proptest! {
    #[test]
    fn cov_filtering_is_idempotent(set in measurement_set(), threshold in 0.01f64..1.0) {
        let (filtered, first) = cov_filter(&set, threshold);
        let (again, second) = cov_filter(&filtered, threshold);
        prop_assert_eq!(&again, &filtered);
        prop_assert!(second.violations.is_empty());
        prop_assert_eq!(first.checked, set.targets().iter()
            .map(|t| set.configs(t).len()).sum::<usize>());
    }
}

fn grid_values() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(1u32..64, 2..6)
        .prop_map(|v| v.into_iter().map(f64::from).collect())
}

proptest! {
    #[test]
    fn designs_stay_within_their_grids_and_never_repeat(
        a in grid_values(),
        b in grid_values(),
        multiplicative in proptest::bool::ANY,
    ) {
        let grids = BTreeMap::from([
            ("a".to_string(), a.clone()),
            ("b".to_string(), b.clone()),
        ]);
        let groups = if multiplicative {
            vec![DepGroup {
                params: vec!["a".to_string(), "b".to_string()],
                relation: Relation::Multiplicative,
                over_approx: false,
            }]
        } else {
            ["a", "b"]
                .iter()
                .map(|p| DepGroup {
                    params: vec![p.to_string()],
                    relation: Relation::Additive,
                    over_approx: false,
                })
                .collect()
        };
        let d = design(&groups, &grids).unwrap();
        prop_assert!(d.n_configs as u64 <= d.full_factorial_size);
        prop_assert!(d.configs.contains(&d.base));
        let mut seen = Vec::new();
        for cfg in &d.configs {
            for (k, v) in cfg {
                prop_assert!(grids[k].contains(v), "{k}={v} not from its grid");
            }
            let key = ConfigKey::from_map(cfg);
            prop_assert!(!seen.contains(&key), "duplicate config in design");
            seen.push(key);
        }
    }
}

fn power_points(a: f64, e: f64) -> Vec<DataPoint> {
    [2.0f64, 4.0, 8.0, 16.0, 32.0, 64.0]
        .iter()
        .map(|n| DataPoint {
            config: BTreeMap::from([("n".to_string(), *n)]),
            y: a * n.powf(e),
        })
        .collect()
}

proptest! {
    #[test]
    fn doubling_measurements_exactly_doubles_the_model(
        a in 0.5f64..100.0,
        e in prop_oneof![Just(0.5f64), Just(1.0), Just(2.0), Just(3.0)],
    ) {
        let deps = vec!["n".to_string()];
        let groups = vec![vec!["n".to_string()]];
        let space = SearchSpace::default();
        let points = power_points(a, e);
        let scaled: Vec<DataPoint> = points
            .iter()
            .map(|p| DataPoint { config: p.config.clone(), y: 2.0 * p.y })
            .collect();
        let m1 = select_guided(&deps, &groups, &space, &points);
        let m2 = select_guided(&deps, &groups, &space, &scaled);
        prop_assert_eq!(m2.intercept, 2.0 * m1.intercept);
        prop_assert_eq!(m1.terms.len(), m2.terms.len());
        for (t1, t2) in m1.terms.iter().zip(&m2.terms) {
            prop_assert_eq!(&t1.shape, &t2.shape);
            prop_assert_eq!(t2.coeff, 2.0 * t1.coeff);
        }
    }

    #[test]
    fn tripling_measurements_triples_the_model_within_tolerance(
        a in 0.5f64..100.0,
        e in prop_oneof![Just(1.0f64), Just(2.0), Just(3.0)],
    ) {
        let deps = vec!["n".to_string()];
        let groups = vec![vec!["n".to_string()]];
        let space = SearchSpace::default();
        let points = power_points(a, e);
        let scaled: Vec<DataPoint> = points
            .iter()
            .map(|p| DataPoint { config: p.config.clone(), y: 3.0 * p.y })
            .collect();
        let m1 = select_guided(&deps, &groups, &space, &points);
        let m2 = select_guided(&deps, &groups, &space, &scaled);
        for point in &points {
            let p1 = m1.predict(&point.config).unwrap();
            let p2 = m2.predict(&point.config).unwrap();
            let denom = p2.abs().max(1e-12);
            prop_assert!(
                ((3.0 * p1 - p2) / denom).abs() < 1e-9,
                "prediction scaling off: {} vs {}", 3.0 * p1, p2
            );
        }
    }
}
