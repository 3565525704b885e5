//! Symbolic compute-volume composition and dependency classification.
//!
//! A program's compute volume is an expression over unresolved loop and
//! extern markers: statements in sequence add (`Sum`), nested loops multiply
//! (`Product`), constant-trip loops fold into plain numbers. Built from the
//! AST plus one taint trace, the volume serves two purposes:
//!
//! * **Upper-bound checking** — substituting each loop marker with its
//!   observed maximum trip count must bound every block's execution count
//!   from above, which cross-checks the composition against reality.
//! * **Dependency classification** — expanding the expression into a sum of
//!   products reveals which parameters multiply each other (they must be
//!   varied jointly in experiments) and which only ever add (they can be
//!   swept independently).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ast::*;
use crate::label::LabelSet;
use crate::taint::{CallPath, TraceReport};

pub const SCHEMA_VERSION: u32 = 1;

/// What an unresolved volume leaf stands for.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum UnresolvedOrigin {
    /// A loop whose trip count is not statically constant.
    Loop { node_id: NodeId, call_path: CallPath },
    /// One dependency atom of a library routine call.
    Extern {
        name: String,
        node_id: NodeId,
        call_path: CallPath,
        atom: usize,
    },
}

/// Symbolic volume expression.
#[derive(Debug, Clone, PartialEq)]
pub enum VolumeExpr {
    Const(f64),
    Unresolved {
        origin: UnresolvedOrigin,
        params: LabelSet,
        /// True when this single marker mixes several parameters on its own
        /// (a loop bound like `size / m2`, or a gated loop) — a product over
        /// them is then only an upper bound.
        multi_source: bool,
    },
    Sum(Vec<VolumeExpr>),
    Product(Vec<VolumeExpr>),
}

impl VolumeExpr {
    /// Canonical form: flattened, constants folded, units dropped.
    /// Normalization is idempotent.
    pub fn normalize(self) -> VolumeExpr {
        match self {
            VolumeExpr::Sum(items) => {
                let mut flat = Vec::new();
                let mut konst = 0.0;
                for item in items {
                    match item.normalize() {
                        VolumeExpr::Const(c) => konst += c,
                        VolumeExpr::Sum(inner) => {
                            for x in inner {
                                match x {
                                    VolumeExpr::Const(c) => konst += c,
                                    other => flat.push(other),
                                }
                            }
                        }
                        other => flat.push(other),
                    }
                }
                if konst != 0.0 {
                    flat.push(VolumeExpr::Const(konst));
                }
                match flat.len() {
                    0 => VolumeExpr::Const(0.0),
                    1 => flat.pop().unwrap(),
                    _ => VolumeExpr::Sum(flat),
                }
            }
            VolumeExpr::Product(items) => {
                let mut flat = Vec::new();
                let mut konst = 1.0;
                for item in items {
                    match item.normalize() {
                        VolumeExpr::Const(c) => konst *= c,
                        VolumeExpr::Product(inner) => {
                            for x in inner {
                                match x {
                                    VolumeExpr::Const(c) => konst *= c,
                                    other => flat.push(other),
                                }
                            }
                        }
                        other => flat.push(other),
                    }
                }
                if konst == 0.0 {
                    return VolumeExpr::Const(0.0);
                }
                if konst != 1.0 {
                    flat.insert(0, VolumeExpr::Const(konst));
                }
                match flat.len() {
                    0 => VolumeExpr::Const(1.0),
                    1 => flat.pop().unwrap(),
                    _ => VolumeExpr::Product(flat),
                }
            }
            leaf => leaf,
        }
    }

    /// Evaluate with a value per unresolved marker.
    pub fn evaluate(&self, resolve: &dyn Fn(&UnresolvedOrigin) -> f64) -> f64 {
        match self {
            VolumeExpr::Const(c) => *c,
            VolumeExpr::Unresolved { origin, .. } => resolve(origin),
            VolumeExpr::Sum(items) => items.iter().map(|x| x.evaluate(resolve)).sum(),
            VolumeExpr::Product(items) => items.iter().map(|x| x.evaluate(resolve)).product(),
        }
    }

    /// Evaluate against a trace: loops at their observed maximum trip count,
    /// extern atoms at one unit each.
    pub fn evaluate_upper(&self, trace: &TraceReport) -> f64 {
        self.evaluate(&|origin| match origin {
            UnresolvedOrigin::Loop { node_id, call_path } => trace
                .loop_record(*node_id, call_path)
                .map(|l| l.max_trips as f64)
                .unwrap_or(0.0),
            UnresolvedOrigin::Extern { .. } => 1.0,
        })
    }

    /// All parameters appearing anywhere in the expression.
    pub fn params(&self) -> LabelSet {
        let mut out = LabelSet::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut LabelSet) {
        match self {
            VolumeExpr::Const(_) => {}
            VolumeExpr::Unresolved { params, .. } => out.union_with(params),
            VolumeExpr::Sum(items) | VolumeExpr::Product(items) => {
                for item in items {
                    item.collect_params(out);
                }
            }
        }
    }
}

impl fmt::Display for VolumeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VolumeExpr::Const(c) => write!(f, "{}", fmt_num(*c)),
            VolumeExpr::Unresolved { origin, params, .. } => {
                match origin {
                    UnresolvedOrigin::Loop { node_id, call_path } => {
                        write!(f, "loop{node_id}")?;
                        if !call_path.is_root() {
                            write!(f, "@{call_path}")?;
                        }
                    }
                    UnresolvedOrigin::Extern {
                        name,
                        node_id,
                        call_path,
                        atom,
                    } => {
                        write!(f, "{name}[{atom}]@{node_id}")?;
                        if !call_path.is_root() {
                            write!(f, "/{call_path}")?;
                        }
                    }
                }
                write!(f, "{params}")
            }
            VolumeExpr::Sum(items) => {
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{item}")?;
                }
                Ok(())
            }
            VolumeExpr::Product(items) => {
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, " * ")?;
                    }
                    if matches!(item, VolumeExpr::Sum(_)) {
                        write!(f, "({item})")?;
                    } else {
                        write!(f, "{item}")?;
                    }
                }
                Ok(())
            }
        }
    }
}

fn fmt_num(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c}")
    }
}

/// Compose the entry function's symbolic volume from the AST and one trace.
///
/// Executed callees are inlined at their call path; calls whose frame never
/// ran contribute zero (their absence shows up through branch labels
/// instead). Recursive calls contribute zero, matching the interpreter's
/// opaque treatment.
pub fn compose_volume(
    program: &Program,
    trace: &TraceReport,
    constant_loops: &BTreeMap<NodeId, u64>,
) -> VolumeExpr {
    let entry = program
        .entry_function()
        .expect("volume composition needs an entry function");
    let mut builder = Builder {
        program,
        trace,
        constant_loops,
        stack: Vec::new(),
    };
    builder.stack.push(entry.name.clone());
    let v = builder.block_volume(&entry.body, &CallPath::root());
    v.normalize()
}

struct Builder<'a> {
    program: &'a Program,
    trace: &'a TraceReport,
    constant_loops: &'a BTreeMap<NodeId, u64>,
    stack: Vec<String>,
}

impl<'a> Builder<'a> {
    fn block_volume(&mut self, block: &Block, path: &CallPath) -> VolumeExpr {
        let items = block
            .stmts
            .iter()
            .map(|s| self.stmt_volume(s, path))
            .collect();
        VolumeExpr::Sum(items)
    }

    fn stmt_volume(&mut self, stmt: &Stmt, path: &CallPath) -> VolumeExpr {
        match &stmt.kind {
            StmtKind::While { cond, body } => {
                // Calls inside the condition run once per trip: count them
                // with the body.
                let per_trip = VolumeExpr::Sum(vec![
                    self.block_volume(body, path),
                    self.expr_volume(cond, path),
                ]);
                self.loop_volume(stmt.id, path, per_trip)
            }
            StmtKind::For {
                from, to, step, body, ..
            } => {
                let body_vol = self.block_volume(body, path);
                let mut items = vec![self.loop_volume(stmt.id, path, body_vol)];
                // Range bounds evaluate once, before the loop.
                items.push(self.expr_volume(from, path));
                items.push(self.expr_volume(to, path));
                if let Some(s) = step {
                    items.push(self.expr_volume(s, path));
                }
                VolumeExpr::Sum(items)
            }
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                let mut items = vec![self.expr_volume(cond, path)];
                items.push(self.block_volume(then_block, path));
                if let Some(e) = else_block {
                    items.push(self.block_volume(e, path));
                }
                VolumeExpr::Sum(items)
            }
            StmtKind::Let { init, .. } => self.expr_volume(init, path),
            StmtKind::LetArray { init, len, .. } => VolumeExpr::Sum(vec![
                self.expr_volume(init, path),
                self.expr_volume(len, path),
            ]),
            StmtKind::Assign { value, .. } => self.expr_volume(value, path),
            StmtKind::AssignIndex { index, value, .. } => VolumeExpr::Sum(vec![
                self.expr_volume(index, path),
                self.expr_volume(value, path),
            ]),
            StmtKind::Return { value } => match value {
                Some(v) => self.expr_volume(v, path),
                None => VolumeExpr::Const(0.0),
            },
            StmtKind::Source { .. } => VolumeExpr::Const(0.0),
            StmtKind::Expr { expr } => self.expr_volume(expr, path),
        }
    }

    /// Trip-count factor times per-trip volume. A body without loops or calls
    /// counts as one unit per trip.
    fn loop_volume(&mut self, node_id: NodeId, path: &CallPath, inner: VolumeExpr) -> VolumeExpr {
        let factor = if let Some(&k) = self.constant_loops.get(&node_id) {
            VolumeExpr::Const(k as f64)
        } else {
            let record = self.trace.loop_record(node_id, path);
            let params = record
                .map(|l| l.labels.iter().cloned().collect())
                .unwrap_or_default();
            let multi_source = record.map(|l| l.direct_labels.len() >= 2).unwrap_or(false);
            VolumeExpr::Unresolved {
                origin: UnresolvedOrigin::Loop {
                    node_id,
                    call_path: path.clone(),
                },
                params,
                multi_source,
            }
        };
        let inner = match inner.normalize() {
            VolumeExpr::Const(c) if c == 0.0 => VolumeExpr::Const(1.0),
            other => other,
        };
        VolumeExpr::Product(vec![factor, inner])
    }

    fn expr_volume(&mut self, expr: &Expr, path: &CallPath) -> VolumeExpr {
        match &expr.kind {
            ExprKind::Number(_) | ExprKind::Var(_) => VolumeExpr::Const(0.0),
            ExprKind::Unary { operand, .. } => self.expr_volume(operand, path),
            ExprKind::Binary { lhs, rhs, .. } => VolumeExpr::Sum(vec![
                self.expr_volume(lhs, path),
                self.expr_volume(rhs, path),
            ]),
            ExprKind::Builtin { args, .. } => {
                VolumeExpr::Sum(args.iter().map(|a| self.expr_volume(a, path)).collect())
            }
            ExprKind::Index { index, .. } => self.expr_volume(index, path),
            ExprKind::Call { name, args } => {
                let mut items: Vec<VolumeExpr> =
                    args.iter().map(|a| self.expr_volume(a, path)).collect();
                if !self.stack.iter().any(|f| f == name) {
                    let child = path.child(expr.id);
                    // Only frames that actually ran contribute volume.
                    if self.trace.frame(name, &child).is_some() {
                        if let Some(func) = self.program.function(name) {
                            self.stack.push(name.clone());
                            items.push(self.block_volume(&func.body, &child));
                            self.stack.pop();
                        }
                    }
                }
                VolumeExpr::Sum(items)
            }
            ExprKind::Extern { name, args } => {
                let mut items: Vec<VolumeExpr> =
                    args.iter().map(|a| self.expr_volume(a, path)).collect();
                if let Some(rec) = self.trace.extern_record(expr.id, path) {
                    for (atom, labels) in rec.atoms.iter().enumerate() {
                        items.push(VolumeExpr::Unresolved {
                            origin: UnresolvedOrigin::Extern {
                                name: name.clone(),
                                node_id: expr.id,
                                call_path: path.clone(),
                                atom,
                            },
                            params: labels.iter().cloned().collect(),
                            multi_source: labels.len() >= 2,
                        });
                    }
                }
                VolumeExpr::Sum(items)
            }
        }
    }
}

/// One block's execution count versus its composed bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockBound {
    pub function: String,
    pub node_id: NodeId,
    pub call_path: CallPath,
    pub count: u64,
    /// invocations × product of enclosing-loop maximum trip counts.
    pub bound: f64,
    pub ok: bool,
}

/// Result of checking composed volumes against observed execution counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundReport {
    pub schema_version: u32,
    pub checks: Vec<BlockBound>,
    pub all_ok: bool,
}

/// Verify that for every executed frame, each block ran at most
/// `invocations × Π max_trips(enclosing loops)` times. This is the product
/// rule the volume composition relies on, checked block by block.
pub fn upper_bound_check(program: &Program, trace: &TraceReport) -> UpperBoundReport {
    let mut checks = Vec::new();
    for frame in &trace.frames {
        let Some(func) = program.function(&frame.function) else {
            continue;
        };
        let mut chain: Vec<f64> = Vec::new();
        walk_blocks(
            &func.body,
            &mut chain,
            trace,
            &frame.call_path,
            frame.invocations,
            &frame.function,
            &mut checks,
        );
    }
    checks.sort_by(|a, b| {
        (&a.function, a.node_id, &a.call_path).cmp(&(&b.function, b.node_id, &b.call_path))
    });
    let all_ok = checks.iter().all(|c| c.ok);
    UpperBoundReport {
        schema_version: SCHEMA_VERSION,
        checks,
        all_ok,
    }
}

fn walk_blocks(
    block: &Block,
    chain: &mut Vec<f64>,
    trace: &TraceReport,
    path: &CallPath,
    invocations: u64,
    function: &str,
    out: &mut Vec<BlockBound>,
) {
    let bound = invocations as f64 * chain.iter().product::<f64>();
    let count = trace.block_count(block.id, path);
    out.push(BlockBound {
        function: function.to_string(),
        node_id: block.id,
        call_path: path.clone(),
        count,
        bound,
        ok: count as f64 <= bound,
    });
    for stmt in &block.stmts {
        match &stmt.kind {
            StmtKind::While { body, .. } | StmtKind::For { body, .. } => {
                let trips = trace
                    .loop_record(stmt.id, path)
                    .map(|l| l.max_trips as f64)
                    .unwrap_or(0.0);
                chain.push(trips);
                walk_blocks(body, chain, trace, path, invocations, function, out);
                chain.pop();
            }
            StmtKind::If {
                then_block,
                else_block,
                ..
            } => {
                walk_blocks(then_block, chain, trace, path, invocations, function, out);
                if let Some(e) = else_block {
                    walk_blocks(e, chain, trace, path, invocations, function, out);
                }
            }
            _ => {}
        }
    }
}

/// How parameters in one dependency group relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Parameters only ever add: each can be swept on its own.
    Additive,
    /// Parameters multiply somewhere: they must be varied jointly.
    Multiplicative,
}

/// A set of parameters that must be designed together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepGroup {
    pub params: Vec<String>,
    pub relation: Relation,
    /// True when a single loop's trip count depends on several parameters at
    /// once — the product form is then an over-approximation (the real
    /// relation could be a ratio or difference).
    pub over_approx: bool,
}

/// Where one parameter's influence was observed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DepSources {
    pub loops: Vec<String>,
    pub branches: Vec<String>,
    pub externs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepParam {
    pub name: String,
    pub sources: DepSources,
}

/// A library routine's internal cost hint, surfaced for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopHint {
    pub routine: String,
    pub hint: String,
    pub params: Vec<String>,
}

/// The classification every later stage consumes: which parameters matter,
/// how they group, and what the program's volume looks like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyReport {
    pub schema_version: u32,
    pub entry: String,
    pub param_values: BTreeMap<String, f64>,
    /// Every parameter with observed runtime influence, sorted.
    pub runtime_params: Vec<String>,
    pub params: Vec<DepParam>,
    pub groups: Vec<DepGroup>,
    pub volume: String,
    pub loop_hints: Vec<LoopHint>,
    pub warnings: Vec<String>,
}

impl DependencyReport {
    pub fn group_of(&self, param: &str) -> Option<&DepGroup> {
        self.groups.iter().find(|g| g.params.iter().any(|p| p == param))
    }
}

/// Expansion cap: beyond this many sum-of-products terms the classification
/// falls back to one conservative all-parameters group.
const EXPANSION_CAP: usize = 20_000;

#[derive(Clone)]
struct ExpTerm {
    params: BTreeSet<String>,
    multi_param_leaf: bool,
}

fn expand(expr: &VolumeExpr) -> Option<Vec<ExpTerm>> {
    match expr {
        VolumeExpr::Const(_) => Some(vec![ExpTerm {
            params: BTreeSet::new(),
            multi_param_leaf: false,
        }]),
        VolumeExpr::Unresolved {
            params,
            multi_source,
            ..
        } => Some(vec![ExpTerm {
            params: params.iter().map(String::from).collect(),
            multi_param_leaf: *multi_source,
        }]),
        VolumeExpr::Sum(items) => {
            let mut out = Vec::new();
            for item in items {
                out.extend(expand(item)?);
                if out.len() > EXPANSION_CAP {
                    return None;
                }
            }
            Some(out)
        }
        VolumeExpr::Product(items) => {
            let mut acc = vec![ExpTerm {
                params: BTreeSet::new(),
                multi_param_leaf: false,
            }];
            for item in items {
                let terms = expand(item)?;
                let mut next = Vec::with_capacity(acc.len() * terms.len());
                for a in &acc {
                    for t in &terms {
                        let mut params = a.params.clone();
                        params.extend(t.params.iter().cloned());
                        next.push(ExpTerm {
                            params,
                            multi_param_leaf: a.multi_param_leaf || t.multi_param_leaf,
                        });
                        if next.len() > EXPANSION_CAP {
                            return None;
                        }
                    }
                }
                acc = next;
            }
            Some(acc)
        }
    }
}

/// Tiny union-find over parameter names.
struct UnionFind {
    parent: BTreeMap<String, String>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind {
            parent: BTreeMap::new(),
        }
    }

    fn add(&mut self, x: &str) {
        self.parent
            .entry(x.to_string())
            .or_insert_with(|| x.to_string());
    }

    fn find(&mut self, x: &str) -> String {
        let p = self.parent.get(x).cloned().unwrap_or_else(|| x.to_string());
        if p == x {
            return p;
        }
        let root = self.find(&p);
        self.parent.insert(x.to_string(), root.clone());
        root
    }

    fn union(&mut self, a: &str, b: &str) {
        self.add(a);
        self.add(b);
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // Smaller name becomes the root, keeping components deterministic.
            let (root, child) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent.insert(child, root);
        }
    }

    fn components(&mut self) -> BTreeMap<String, BTreeSet<String>> {
        let names: Vec<String> = self.parent.keys().cloned().collect();
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for name in names {
            let root = self.find(&name);
            out.entry(root).or_default().insert(name);
        }
        out
    }
}

/// Classify runtime parameter dependencies from a trace and its volume.
pub fn classify_dependencies(trace: &TraceReport, volume: &VolumeExpr) -> DependencyReport {
    let mut warnings = trace.warnings.clone();

    let terms = match expand(volume) {
        Some(t) => t,
        None => {
            warnings.push(format!(
                "volume expansion exceeded {EXPANSION_CAP} terms; treating all parameters as one multiplicative group"
            ));
            vec![ExpTerm {
                params: volume.params().iter().map(String::from).collect(),
                multi_param_leaf: true,
            }]
        }
    };

    let mut uf = UnionFind::new();
    let mut over_approx_roots: BTreeSet<String> = BTreeSet::new();
    for term in &terms {
        let params: Vec<&String> = term.params.iter().collect();
        for p in &params {
            uf.add(p);
        }
        for pair in params.windows(2) {
            uf.union(pair[0], pair[1]);
        }
        if term.multi_param_leaf {
            for p in &params {
                over_approx_roots.insert(p.to_string());
            }
        }
    }
    // Branch-only parameters join as their own nodes; if they also gate
    // loops, taint already put them in those loops' label sets.
    for b in &trace.branches {
        for label in &b.labels {
            uf.add(label);
        }
    }

    let components = uf.components();
    let mut groups = Vec::new();
    for members in components.values() {
        let over_approx = members.iter().any(|m| {
            over_approx_roots.contains(m)
        });
        groups.push(DepGroup {
            params: members.iter().cloned().collect(),
            relation: if members.len() >= 2 {
                Relation::Multiplicative
            } else {
                Relation::Additive
            },
            over_approx,
        });
    }

    // Per-parameter provenance straight from the trace.
    let mut sources: BTreeMap<String, DepSources> = BTreeMap::new();
    for l in &trace.loops {
        for p in &l.labels {
            sources
                .entry(p.clone())
                .or_default()
                .loops
                .push(site(l.node_id, &l.call_path));
        }
    }
    for b in &trace.branches {
        for p in &b.labels {
            sources
                .entry(p.clone())
                .or_default()
                .branches
                .push(site(b.node_id, &b.call_path));
        }
    }
    for e in &trace.extern_calls {
        let mut union: BTreeSet<&String> = BTreeSet::new();
        for atom in &e.atoms {
            union.extend(atom.iter());
        }
        for p in union {
            sources
                .entry(p.clone())
                .or_default()
                .externs
                .push(format!("{}@{}", e.name, site(e.node_id, &e.call_path)));
        }
    }

    let mut runtime_params: BTreeSet<String> = sources.keys().cloned().collect();
    for g in &groups {
        runtime_params.extend(g.params.iter().cloned());
    }

    let mut loop_hints: Vec<LoopHint> = Vec::new();
    for e in &trace.extern_calls {
        if let Some(hint) = &e.loop_hint {
            let mut params: BTreeSet<String> = BTreeSet::new();
            for atom in &e.atoms {
                params.extend(atom.iter().cloned());
            }
            let entry = LoopHint {
                routine: e.name.clone(),
                hint: hint.clone(),
                params: params.into_iter().collect(),
            };
            if !loop_hints.contains(&entry) {
                loop_hints.push(entry);
            }
        }
    }
    loop_hints.sort_by(|a, b| (&a.routine, &a.hint).cmp(&(&b.routine, &b.hint)));

    DependencyReport {
        schema_version: SCHEMA_VERSION,
        entry: trace.entry.clone(),
        param_values: trace.param_values.clone(),
        runtime_params: runtime_params.into_iter().collect(),
        params: sources
            .into_iter()
            .map(|(name, sources)| DepParam { name, sources })
            .collect(),
        groups,
        volume: volume.to_string(),
        loop_hints,
        warnings,
    }
}

fn site(node: NodeId, path: &CallPath) -> String {
    if path.is_root() {
        format!("{node}")
    } else {
        format!("{node}@{path}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::libdb::LibraryDB;
    use crate::parser::parse;
    use crate::taint::{run, RunOptions};
    use crate::validate::validate;

    fn analyze(src: &str, params: &[(&str, f64)]) -> (Program, TraceReport, VolumeExpr) {
        let program = parse(src).unwrap();
        let db = LibraryDB::mpi_default();
        let vr = validate(&program, &db);
        assert!(vr.is_ok(), "validation failed: {:?}", vr.errors);
        let params: std::collections::BTreeMap<String, f64> =
            params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let trace = run(&program, &db, &params, &RunOptions::default()).unwrap();
        let volume = compose_volume(&program, &trace, &vr.constant_loops);
        (program, trace, volume)
    }

    fn leaf(params: &[&str]) -> VolumeExpr {
        VolumeExpr::Unresolved {
            origin: UnresolvedOrigin::Loop {
                node_id: 99,
                call_path: CallPath::root(),
            },
            params: params.iter().map(|s| s.to_string()).collect(),
            multi_source: false,
        }
    }

    #[test]
    fn normalize_folds_constants_and_units() {
        let e = VolumeExpr::Sum(vec![
            VolumeExpr::Const(2.0),
            VolumeExpr::Product(vec![VolumeExpr::Const(1.0), leaf(&["n"])]),
            VolumeExpr::Const(3.0),
            VolumeExpr::Product(vec![VolumeExpr::Const(0.0), leaf(&["m"])]),
        ]);
        let n = e.normalize();
        // 2 + 1*n + 3 + 0*m  →  n + 5 (constant folded last in sums)
        assert_eq!(n, VolumeExpr::Sum(vec![leaf(&["n"]), VolumeExpr::Const(5.0)]));
        assert_eq!(n.to_string(), "loop99{n} + 5");
    }

    #[test]
    fn normalize_is_idempotent() {
        let e = VolumeExpr::Product(vec![
            VolumeExpr::Sum(vec![leaf(&["a"]), VolumeExpr::Sum(vec![leaf(&["b"])])]),
            VolumeExpr::Const(2.0),
            VolumeExpr::Product(vec![leaf(&["c"]), VolumeExpr::Const(3.0)]),
        ]);
        let once = e.normalize();
        let twice = once.clone().normalize();
        assert_eq!(once, twice);
    }

    #[test]
    fn empty_sum_and_product_collapse() {
        assert_eq!(VolumeExpr::Sum(vec![]).normalize(), VolumeExpr::Const(0.0));
        assert_eq!(
            VolumeExpr::Product(vec![]).normalize(),
            VolumeExpr::Const(1.0)
        );
    }

    #[test]
    fn triangular_nest_bounds_hold_with_slack() {
        let src = "fn main() {
            let t = 0;
            for i in 0..4 { for j in 0..i { t = t + 1; } }
        }";
        let (program, trace, volume) = analyze(src, &[]);
        // Outer loop is constant (4); inner depends on i, max 3 trips.
        // Substituted bound: 4 * 3 = 12, against 6 actual inner executions.
        assert_eq!(volume.evaluate_upper(&trace), 12.0);
        let report = upper_bound_check(&program, &trace);
        assert!(report.all_ok);
        let inner = report.checks.iter().find(|c| c.count == 6).unwrap();
        assert_eq!(inner.bound, 12.0);
    }

    #[test]
    fn perfect_nest_bound_is_exact() {
        let src = "fn main() {
            let t = 0;
            for i in 0..4 { for j in 0..5 { t = t + 1; } }
        }";
        let (program, trace, volume) = analyze(src, &[]);
        assert_eq!(volume.evaluate_upper(&trace), 20.0);
        assert_eq!(volume.to_string(), "20");
        let report = upper_bound_check(&program, &trace);
        assert!(report.all_ok);
        let inner = report.checks.iter().find(|c| c.count == 20).unwrap();
        assert_eq!(inner.bound, 20.0);
    }

    #[test]
    fn sequential_loops_add() {
        let src = "fn main() {
            let t = 0;
            for i in 0..3 { t = t + 1; }
            for j in 0..4 { t = t + 1; }
        }";
        let (program, trace, volume) = analyze(src, &[]);
        assert_eq!(volume, VolumeExpr::Const(7.0));
        assert_eq!(volume.evaluate_upper(&trace), 7.0);
        assert!(upper_bound_check(&program, &trace).all_ok);
    }

    #[test]
    fn dynamic_sequential_loops_are_additive_groups() {
        let src = "
            param size; param m2;
            fn main(size, m2) {
                let t = 0;
                for i in 0..size { t = t + 1; }
                for j in 0..m2 { t = t + 1; }
            }
        ";
        let (_, trace, volume) = analyze(src, &[("size", 6.0), ("m2", 3.0)]);
        let report = classify_dependencies(&trace, &volume);
        assert_eq!(report.groups.len(), 2);
        for g in &report.groups {
            assert_eq!(g.relation, Relation::Additive);
            assert!(!g.over_approx);
        }
        assert_eq!(report.runtime_params, vec!["m2", "size"]);
    }

    #[test]
    fn nested_dynamic_loops_are_one_multiplicative_group() {
        let src = "
            param size; param m2;
            fn main(size, m2) {
                let t = 0;
                for i in 0..size { for j in 0..m2 { t = t + 1; } }
            }
        ";
        let (program, trace, volume) = analyze(src, &[("size", 6.0), ("m2", 3.0)]);
        let report = classify_dependencies(&trace, &volume);
        assert_eq!(report.groups.len(), 1);
        let g = &report.groups[0];
        assert_eq!(g.params, vec!["m2", "size"]);
        assert_eq!(g.relation, Relation::Multiplicative);
        assert!(!g.over_approx, "separate loops are a faithful product");
        assert!(upper_bound_check(&program, &trace).all_ok);
    }

    #[test]
    fn ratio_loop_is_multiplicative_but_over_approximated() {
        let src = "
            param size; param m2;
            fn main(size, m2) {
                let i = 0;
                while i < size / m2 { i = i + 1; }
            }
        ";
        let (_, trace, volume) = analyze(src, &[("size", 24.0), ("m2", 3.0)]);
        let report = classify_dependencies(&trace, &volume);
        assert_eq!(report.groups.len(), 1);
        let g = &report.groups[0];
        assert_eq!(g.params, vec!["m2", "size"]);
        assert_eq!(g.relation, Relation::Multiplicative);
        assert!(g.over_approx, "one loop bound mixing two params is not a real product");
    }

    #[test]
    fn branch_only_param_is_an_additive_singleton() {
        let src = "
            param mode;
            fn main(mode) {
                let t = 0;
                if mode > 4 { t = 1; } else { t = 2; }
            }
        ";
        let (_, trace, volume) = analyze(src, &[("mode", 8.0)]);
        let report = classify_dependencies(&trace, &volume);
        assert_eq!(report.groups.len(), 1);
        assert_eq!(report.groups[0].params, vec!["mode"]);
        assert_eq!(report.groups[0].relation, Relation::Additive);
        let p = &report.params[0];
        assert_eq!(p.name, "mode");
        assert!(!p.sources.branches.is_empty());
        assert!(p.sources.loops.is_empty());
    }

    #[test]
    fn branch_gating_a_loop_links_params_conservatively() {
        let src = "
            param mode; param size;
            fn main(mode, size) {
                let t = 0;
                if mode > 4 { for i in 0..size { t = t + 1; } }
            }
        ";
        let (_, trace, volume) = analyze(src, &[("mode", 8.0), ("size", 5.0)]);
        let report = classify_dependencies(&trace, &volume);
        assert_eq!(report.groups.len(), 1);
        let g = &report.groups[0];
        assert_eq!(g.params, vec!["mode", "size"]);
        assert_eq!(g.relation, Relation::Multiplicative);
        assert!(g.over_approx, "gating is not a true product; flag it");
    }

    #[test]
    fn extern_atoms_stay_additive_across_params() {
        let src = r#"
            param size;
            fn main(size) {
                let buf = 0;
                let n = size * 4;
                extern("MPI_Send", buf, n);
            }
        "#;
        let (_, trace, volume) = analyze(src, &[("size", 10.0), ("p", 4.0)]);
        let report = classify_dependencies(&trace, &volume);
        // Two atoms (routine's own p-dependence, message-size dependence)
        // are separate summands: p and size stay in separate groups.
        assert_eq!(report.groups.len(), 2);
        for g in &report.groups {
            assert_eq!(g.relation, Relation::Additive);
        }
        assert!(volume.to_string().contains("MPI_Send[0]"));
        assert!(volume.to_string().contains("MPI_Send[1]"));
    }

    #[test]
    fn loop_hints_surface_from_library_entries() {
        let src = r#"fn main() { let buf = 0; extern("MPI_Allreduce", buf, 1); }"#;
        let (_, trace, volume) = analyze(src, &[("p", 4.0)]);
        let report = classify_dependencies(&trace, &volume);
        assert_eq!(report.loop_hints.len(), 1);
        assert_eq!(report.loop_hints[0].routine, "MPI_Allreduce");
        assert_eq!(report.loop_hints[0].hint, "log(p)");
    }

    #[test]
    fn call_sites_extend_paths_and_same_param_merges_additively() {
        let src = "
            param n;
            fn work(k) { let t = 0; for i in 0..k { t = t + 1; } return t; }
            fn main(n) { let a = work(n); let b = work(2 * n); return a + b; }
        ";
        let (program, trace, volume) = analyze(src, &[("n", 3.0)]);
        // Two distinct loop leaves, one per call path.
        let s = volume.to_string();
        assert_eq!(s.matches("loop").count(), 2);
        assert!(s.contains('@'), "inlined loops carry their call path");
        let report = classify_dependencies(&trace, &volume);
        assert_eq!(report.groups.len(), 1);
        assert_eq!(report.groups[0].params, vec!["n"]);
        assert_eq!(report.groups[0].relation, Relation::Additive);
        assert!(upper_bound_check(&program, &trace).all_ok);
    }

    #[test]
    fn unexecuted_call_contributes_no_volume() {
        let src = "
            param mode;
            fn heavy() { let t = 0; for i in 0..100 { t = t + 1; } return t; }
            fn main(mode) { let r = 0; if mode > 10 { r = heavy(); } return r; }
        ";
        let (program, trace, volume) = analyze(src, &[("mode", 2.0)]);
        assert_eq!(volume.evaluate_upper(&trace), 0.0);
        assert!(upper_bound_check(&program, &trace).all_ok);
        // mode still shows up, through the branch sink.
        let report = classify_dependencies(&trace, &volume);
        assert_eq!(report.runtime_params, vec!["mode"]);
    }

    #[test]
    fn classification_report_round_trips_and_is_deterministic() {
        let src = "
            param size; param m2;
            fn main(size, m2) {
                let t = 0;
                for i in 0..size { for j in 0..m2 { t = t + 1; } }
                for k in 0..m2 { t = t + 1; }
            }
        ";
        let (_, trace, volume) = analyze(src, &[("size", 4.0), ("m2", 3.0)]);
        let a = classify_dependencies(&trace, &volume);
        let b = classify_dependencies(&trace, &volume);
        assert_eq!(a, b);
        let json = serde_json::to_string_pretty(&a).unwrap();
        let back: DependencyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }
}
