//! Hypothesis generation and model selection.
//!
//! Two regimes share one selection rule:
//!
//! * **Guided** — the dependency analysis supplies the parameters that can
//!   matter and how they group. Groups become terms (multiplicative groups
//!   multiply their members' shapes into one term), candidate shapes per
//!   parameter come from ranking every single shape on a slice of the data
//!   where the other parameters sit at their base value. No dependency means
//!   no term: pruned functions get a constant model without touching data
//!   shape-by-shape.
//! * **Blackbox** — no structural knowledge: every parameter is a suspect,
//!   shapes are ranked marginally on the full data, and sums and products
//!   over parameter pairs all compete. More hypotheses, more chances for
//!   noise to look like structure.
//!
//! Selection is deterministic: lowest cross-validated SMAPE, then fewest
//! terms, then lexically smallest shape list. Hypotheses that predict
//! negative runtimes anywhere on the measured box are rejected outright.

use std::collections::BTreeMap;

use super::fit::{fit_shapes, median, smape, DataPoint, Fitted};
use super::space::{SearchSpace, TermShape};
use super::{Mode, ModelTerm, PerfModel};

/// Slices need at least this many distinct values to rank a parameter's
/// shapes on the slice; otherwise ranking falls back to the full data.
const MIN_SLICE_VALUES: usize = 3;

/// How many top-ranked shapes per parameter enter hypothesis generation.
const TOP_SHAPES: usize = 3;

/// Build the constant model: the median measurement, scored by
/// leave-one-out like everything else.
fn constant_model(points: &[DataPoint], mode: Mode) -> PerfModel {
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let n = ys.len();
    let cv = if n >= 2 {
        let total: f64 = (0..n)
            .map(|held| {
                let rest: Vec<f64> = ys
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != held)
                    .map(|(_, v)| *v)
                    .collect();
                smape(ys[held], median(&rest))
            })
            .sum();
        total / n as f64
    } else {
        0.0
    };
    PerfModel::assemble(mode, median(&ys), Vec::new(), cv, n)
}

/// One fitted hypothesis in the running.
struct Candidate {
    shapes: Vec<TermShape>,
    fitted: Fitted,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        self.fitted
            .cv_smape
            .total_cmp(&other.fitted.cv_smape)
            .then(self.shapes.len().cmp(&other.shapes.len()))
            .then(self.shapes.cmp(&other.shapes))
            .is_lt()
    }
}

/// Fit a hypothesis and keep it only if it is solvable and never predicts a
/// negative runtime on the measured region.
fn try_candidate(shapes: Vec<TermShape>, points: &[DataPoint]) -> Option<Candidate> {
    let fitted = fit_shapes(&shapes, points)?;
    let predict = |config: &BTreeMap<String, f64>| -> Option<f64> {
        let mut v = fitted.intercept;
        for (s, c) in shapes.iter().zip(&fitted.coeffs) {
            v += c * s.eval(config)?;
        }
        Some(v)
    };
    for p in points {
        if predict(&p.config)? < -1e-9 {
            return None;
        }
    }
    for corner in bounding_box_corners(&shapes, points) {
        if predict(&corner)? < -1e-9 {
            return None;
        }
    }
    Some(Candidate { shapes, fitted })
}

/// Min/max combinations of every parameter the hypothesis touches.
fn bounding_box_corners(
    shapes: &[TermShape],
    points: &[DataPoint],
) -> Vec<BTreeMap<String, f64>> {
    let mut ranges: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for s in shapes {
        for param in s.params() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for p in points {
                if let Some(&v) = p.config.get(param) {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if lo.is_finite() {
                ranges.insert(param.to_string(), (lo, hi));
            }
        }
    }
    let params: Vec<&String> = ranges.keys().collect();
    if params.len() > 12 {
        return Vec::new(); // 2^13+ corners buys nothing; training checks stand.
    }
    let mut corners = Vec::new();
    for mask in 0..(1u32 << params.len()) {
        let mut config = BTreeMap::new();
        for (i, name) in params.iter().enumerate() {
            let (lo, hi) = ranges[*name];
            config.insert(
                (*name).clone(),
                if mask & (1 << i) != 0 { hi } else { lo },
            );
        }
        corners.push(config);
    }
    corners
}

/// Rank one parameter's single shapes by cross-validated fit on `points`,
/// returning the `TOP_SHAPES` best.
fn top_shapes_for(param: &str, points: &[DataPoint], space: &SearchSpace) -> Vec<TermShape> {
    let mut scored: Vec<(f64, TermShape)> = Vec::new();
    for shape in space.single_param_shapes(param) {
        if let Some(fitted) = fit_shapes(std::slice::from_ref(&shape), points) {
            scored.push((fitted.cv_smape, shape));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(TOP_SHAPES).map(|(_, s)| s).collect()
}

/// Configurations where every parameter in `others` sits at its base
/// (minimum observed) value.
fn base_slice(points: &[DataPoint], others: &[&String]) -> Vec<DataPoint> {
    let mut bases: BTreeMap<&String, f64> = BTreeMap::new();
    for o in others {
        let base = points
            .iter()
            .filter_map(|p| p.config.get(*o).copied())
            .fold(f64::INFINITY, f64::min);
        bases.insert(*o, base);
    }
    points
        .iter()
        .filter(|p| {
            bases
                .iter()
                .all(|(o, base)| p.config.get(*o).map(|v| v == base).unwrap_or(true))
        })
        .cloned()
        .collect()
}

fn distinct_values(points: &[DataPoint], param: &str) -> usize {
    let mut vals: Vec<f64> = points.iter().filter_map(|p| p.config.get(param).copied()).collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    vals.len()
}

/// Rank each parameter's shapes on its base slice — configurations where the
/// other parameters sit at their minimum — falling back to all points when
/// the slice is too thin. This needs only the data, not program structure.
fn ranked_shapes_sliced<'a>(
    params: &'a [String],
    points: &[DataPoint],
    space: &SearchSpace,
) -> BTreeMap<&'a String, Vec<TermShape>> {
    let mut out = BTreeMap::new();
    for p in params {
        let others: Vec<&String> = params.iter().filter(|q| *q != p).collect();
        let slice = base_slice(points, &others);
        let use_slice = distinct_values(&slice, p) >= MIN_SLICE_VALUES;
        let ranking_points: &[DataPoint] = if use_slice { &slice } else { points };
        out.insert(p, top_shapes_for(p, ranking_points, space));
    }
    out
}

/// Taint-informed model selection.
///
/// `groups` must partition `deps`; each group's parameters multiply into a
/// single term, separate groups get separate terms.
pub fn select_guided(
    deps: &[String],
    groups: &[Vec<String>],
    space: &SearchSpace,
    points: &[DataPoint],
) -> PerfModel {
    let constant = constant_model(points, Mode::Guided);
    if deps.is_empty() || points.is_empty() {
        return constant;
    }

    // Shape candidates per parameter, ranked on the parameter's base slice.
    let shapes_per_param = ranked_shapes_sliced(deps, points, space);

    // One term option list per group: skip the group, or one product shape
    // from the cross product of its members' candidates.
    let mut group_options: Vec<Vec<Option<TermShape>>> = Vec::new();
    for group in groups {
        let mut options: Vec<Option<TermShape>> = vec![None];
        let mut partials: Vec<TermShape> = vec![TermShape { factors: Vec::new() }];
        for member in group {
            let member_shapes = shapes_per_param.get(member).cloned().unwrap_or_default();
            if member_shapes.is_empty() {
                continue;
            }
            let mut next = Vec::new();
            for partial in &partials {
                for s in &member_shapes {
                    next.push(partial.product(s));
                }
            }
            partials = next;
        }
        for p in partials {
            if !p.factors.is_empty() {
                options.push(Some(p));
            }
        }
        group_options.push(options);
    }

    let mut hypotheses: Vec<Vec<TermShape>> = vec![Vec::new()];
    for options in &group_options {
        let mut next = Vec::new();
        for h in &hypotheses {
            for opt in options {
                let mut h2 = h.clone();
                if let Some(s) = opt {
                    h2.push(s.clone());
                }
                next.push(h2);
            }
        }
        hypotheses = next;
    }
    // A lone group may carry two of its candidate shapes as separate terms
    // (e.g. a quadratic plus a linear part of the same parameter).
    if groups.len() == 1 && space.max_terms >= 2 {
        if let [options] = &group_options[..] {
            let shapes: Vec<&TermShape> = options.iter().flatten().collect();
            for i in 0..shapes.len() {
                for j in (i + 1)..shapes.len() {
                    hypotheses.push(vec![shapes[i].clone(), shapes[j].clone()]);
                }
            }
        }
    }

    let mut best: Option<Candidate> = None;
    for mut shapes in hypotheses {
        if shapes.is_empty() {
            continue; // the constant model covers this
        }
        shapes.sort();
        if let Some(cand) = try_candidate(shapes, points) {
            if best.as_ref().map(|b| cand.better_than(b)).unwrap_or(true) {
                best = Some(cand);
            }
        }
    }

    finish(best, constant, points.len(), Mode::Guided)
}

/// Structure-free model selection over every designed parameter.
pub fn select_blackbox(
    params: &[String],
    space: &SearchSpace,
    points: &[DataPoint],
) -> PerfModel {
    let constant = constant_model(points, Mode::Blackbox);
    if params.is_empty() || points.is_empty() {
        return constant;
    }

    let shapes_per_param = ranked_shapes_sliced(params, points, space);

    let mut hypotheses: Vec<Vec<TermShape>> = Vec::new();
    for p in params {
        for s in &shapes_per_param[p] {
            hypotheses.push(vec![s.clone()]);
        }
    }
    if space.max_terms >= 2 {
        for (i, p) in params.iter().enumerate() {
            // Two terms of one parameter.
            let sp = &shapes_per_param[p];
            for a in 0..sp.len() {
                for b in (a + 1)..sp.len() {
                    hypotheses.push(vec![sp[a].clone(), sp[b].clone()]);
                }
            }
            // Sums and products across parameter pairs.
            for q in params.iter().skip(i + 1) {
                for a in sp {
                    for b in &shapes_per_param[q] {
                        hypotheses.push(vec![a.clone(), b.clone()]);
                        hypotheses.push(vec![a.product(b)]);
                    }
                }
            }
        }
    }

    let mut best: Option<Candidate> = None;
    for mut shapes in hypotheses {
        shapes.sort();
        if let Some(cand) = try_candidate(shapes, points) {
            if best.as_ref().map(|b| cand.better_than(b)).unwrap_or(true) {
                best = Some(cand);
            }
        }
    }

    finish(best, constant, points.len(), Mode::Blackbox)
}

fn finish(
    best: Option<Candidate>,
    constant: PerfModel,
    n_configs: usize,
    mode: Mode,
) -> PerfModel {
    match best {
        Some(c) if c.fitted.cv_smape < constant.cv_smape => {
            let terms = c
                .shapes
                .into_iter()
                .zip(c.fitted.coeffs)
                .map(|(shape, coeff)| ModelTerm { coeff, shape })
                .collect();
            PerfModel::assemble(mode, c.fitted.intercept, terms, c.fitted.cv_smape, n_configs)
        }
        _ => constant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_points(f: impl Fn(f64, f64) -> f64) -> Vec<DataPoint> {
        let mut points = Vec::new();
        for &p in &[27.0, 81.0, 243.0, 729.0] {
            for &size in &[25.0, 30.0, 35.0, 40.0, 45.0] {
                points.push(DataPoint {
                    config: BTreeMap::from([("p".to_string(), p), ("size".to_string(), size)]),
                    y: f(p, size),
                });
            }
        }
        points
    }

    fn single_points(f: impl Fn(f64) -> f64) -> Vec<DataPoint> {
        [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0]
            .iter()
            .map(|&x| DataPoint {
                config: BTreeMap::from([("x".to_string(), x)]),
                y: f(x),
            })
            .collect()
    }

    #[test]
    fn no_dependencies_yields_constant_without_fitting() {
        let points = single_points(|_| 42.0);
        let m = select_guided(&[], &[], &SearchSpace::default(), &points);
        assert!(m.terms.is_empty());
        assert_eq!(m.intercept, 42.0);
        assert_eq!(m.formula, "42");
    }

    #[test]
    fn guided_recovers_log_square_exactly() {
        let points = single_points(|r| 2.86 * r.log2().powi(2) + 127.0);
        let deps = vec!["x".to_string()];
        let groups = vec![vec!["x".to_string()]];
        let m = select_guided(&deps, &groups, &SearchSpace::default(), &points);
        assert_eq!(m.terms.len(), 1);
        assert_eq!(m.terms[0].shape.to_string(), "log2(x)^2");
        assert!((m.terms[0].coeff - 2.86).abs() < 1e-9);
        assert!((m.intercept - 127.0).abs() < 1e-9);
        assert!(m.cv_smape < 1e-9);
        // Spot predictions frozen from the closed form.
        let at = |v: f64| m.predict(&BTreeMap::from([("x".to_string(), v)])).unwrap();
        assert!((at(2.0) - 129.86).abs() < 1e-9);
        assert!((at(16.0) - 172.76).abs() < 1e-9);
    }

    #[test]
    fn guided_additive_groups_get_one_term_each() {
        let points = grid_points(|p, size| 3e-3 * p.sqrt() + 1e-5 * size.powi(3));
        let deps = vec!["p".to_string(), "size".to_string()];
        let groups = vec![vec!["p".to_string()], vec!["size".to_string()]];
        let m = select_guided(&deps, &groups, &SearchSpace::default(), &points);
        assert_eq!(m.terms.len(), 2);
        let shapes: Vec<String> = m.terms.iter().map(|t| t.shape.to_string()).collect();
        assert_eq!(shapes, vec!["p^(1/2)", "size^3"]);
        assert!((m.terms[0].coeff - 3e-3).abs() < 1e-6);
        assert!((m.terms[1].coeff - 1e-5).abs() < 1e-8);
        assert!(m.intercept.abs() < 1e-6);
    }

    #[test]
    fn guided_multiplicative_group_gets_a_product_term() {
        let points = grid_points(|p, size| 2.4e-8 * p.powf(0.25) * size.powi(3));
        let deps = vec!["p".to_string(), "size".to_string()];
        let groups = vec![vec!["p".to_string(), "size".to_string()]];
        let m = select_guided(&deps, &groups, &SearchSpace::default(), &points);
        assert_eq!(m.terms.len(), 1);
        assert_eq!(m.terms[0].shape.to_string(), "p^(1/4) * size^3");
        assert!((m.terms[0].coeff - 2.4e-8).abs() < 1e-11);
    }

    #[test]
    fn negative_predicting_hypotheses_are_rejected() {
        // A strongly decreasing trend would fit y = a - b·x with negative
        // predictions past the data; the model must not pick such a shape.
        let points = single_points(|x| (1000.0 - 3.5 * x).max(1.0));
        let deps = vec!["x".to_string()];
        let groups = vec![vec!["x".to_string()]];
        let m = select_guided(&deps, &groups, &SearchSpace::default(), &points);
        for p in &points {
            let pred = m.predict(&p.config).unwrap();
            assert!(pred >= -1e-9, "negative prediction {pred}");
        }
    }

    #[test]
    fn blackbox_finds_single_param_structure_too() {
        let points = single_points(|x| 0.5 * x * x + 3.0);
        let m = select_blackbox(&["x".to_string()], &SearchSpace::default(), &points);
        assert_eq!(m.terms.len(), 1);
        assert_eq!(m.terms[0].shape.to_string(), "x^2");
        assert!((m.terms[0].coeff - 0.5).abs() < 1e-9);
    }

    #[test]
    fn blackbox_considers_cross_parameter_products() {
        let points = grid_points(|p, size| 1e-4 * p * size);
        let m = select_blackbox(
            &["p".to_string(), "size".to_string()],
            &SearchSpace::default(),
            &points,
        );
        assert_eq!(m.terms.len(), 1);
        assert_eq!(m.terms[0].shape.to_string(), "p * size");
        assert!((m.terms[0].coeff - 1e-4).abs() < 1e-8);
    }

    #[test]
    fn selection_is_deterministic() {
        let points = grid_points(|p, size| 2e-3 * p + 1e-4 * size * size);
        let deps = vec!["p".to_string(), "size".to_string()];
        let groups = vec![vec!["p".to_string()], vec!["size".to_string()]];
        let a = select_guided(&deps, &groups, &SearchSpace::default(), &points);
        let b = select_guided(&deps, &groups, &SearchSpace::default(), &points);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn unvaried_dependency_degrades_to_fewer_terms() {
        // size varies, p is pinned: p-shapes are collinear with the
        // intercept, so the p group must drop out instead of failing.
        let mut points = Vec::new();
        for &size in &[25.0, 30.0, 35.0, 40.0, 45.0, 50.0] {
            points.push(DataPoint {
                config: BTreeMap::from([("p".to_string(), 8.0), ("size".to_string(), size)]),
                y: 1e-5 * size.powi(3) + 2.0,
            });
        }
        let deps = vec!["p".to_string(), "size".to_string()];
        let groups = vec![vec!["p".to_string()], vec!["size".to_string()]];
        let m = select_guided(&deps, &groups, &SearchSpace::default(), &points);
        assert_eq!(m.terms.len(), 1);
        assert_eq!(m.terms[0].shape.to_string(), "size^3");
    }
}
