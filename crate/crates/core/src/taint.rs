//! Dynamic taint analysis over PTL programs.
//!
//! The interpreter executes a program concretely while tracking, for every
//! value, the set of performance parameters it depends on. Labels enter at
//! sources (entry parameters, `source()` statements, library-DB source
//! writes), flow through expressions by set union, and flow through control:
//! while execution sits inside a branch or loop whose condition carries
//! labels, every write picks those labels up. With implicit flows enabled
//! (the default), condition labels are additionally unioned into the static
//! write sets of branch arms and loop bodies on exit, which covers the arm
//! that did not run.
//!
//! Sinks are loop exit conditions and branch conditions: each evaluation
//! merges its label set into the per-`(node, call path)` record, alongside
//! trip counts, branch polarity counts, and per-block execution counts. The
//! aggregated [`TraceReport`] is what every later pipeline stage consumes.
//!
//! Loops are identified by `(AST node id, call path)`, so the same function
//! called from two sites yields two records. Recursion is not analyzed: a
//! recursive call returns 0 labeled with the union of its argument labels,
//! and the run carries a warning.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ast::*;
use crate::label::LabelSet;
use crate::libdb::{DepAtom, LibraryDB};

pub const SCHEMA_VERSION: u32 = 1;

/// Call-site node ids from the entry function down to the current frame.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CallPath(pub Vec<NodeId>);

impl CallPath {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn child(&self, site: NodeId) -> Self {
        let mut v = self.0.clone();
        v.push(site);
        CallPath(v)
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Parse the textual form used in CSV files: ids joined by `/`, empty
    /// string for the root.
    pub fn parse(s: &str) -> Option<CallPath> {
        if s.is_empty() {
            return Some(CallPath::root());
        }
        let mut ids = Vec::new();
        for part in s.split('/') {
            ids.push(part.parse().ok()?);
        }
        Some(CallPath(ids))
    }
}

impl fmt::Display for CallPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "/")?;
            }
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

/// Knobs for one analysis run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Propagate condition labels into untaken-arm write sets (default on).
    pub implicit_flows: bool,
    /// Abort any loop that exceeds this many trips in a single entry.
    pub loop_guard: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            implicit_flows: true,
            loop_guard: 100_000_000,
        }
    }
}

/// Aggregated loop-exit sink: labels merged over every evaluation of the exit
/// condition, plus trip statistics across entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub node_id: NodeId,
    pub call_path: CallPath,
    pub labels: Vec<String>,
    /// `labels` minus what enclosing loops' conditions contributed: the
    /// parameters this loop's own exit condition and branch gates depend on.
    /// Several parameters here mean one trip count mixes them — a product
    /// over-approximates.
    pub direct_labels: Vec<String>,
    pub entries: u64,
    pub total_trips: u64,
    pub max_trips: u64,
}

/// Aggregated branch sink for one tainted `if`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub node_id: NodeId,
    pub call_path: CallPath,
    pub labels: Vec<String>,
    pub taken: u64,
    pub not_taken: u64,
}

/// Aggregated extern call: dependency atoms resolved against runtime labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternRecord {
    pub node_id: NodeId,
    pub call_path: CallPath,
    pub name: String,
    /// One label set per dependency-template atom, merged across calls.
    pub atoms: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_hint: Option<String>,
}

/// One executed `(function, call path)` context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub function: String,
    pub call_path: CallPath,
    pub invocations: u64,
}

/// Execution count of one block (function body, branch arm, or loop body).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCount {
    pub node_id: NodeId,
    pub call_path: CallPath,
    pub count: u64,
}

/// Everything one taint run produces, aggregated and deterministically
/// ordered. This is the content of `taint.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub schema_version: u32,
    pub entry: String,
    pub param_values: BTreeMap<String, f64>,
    pub implicit_flows: bool,
    pub loops: Vec<LoopRecord>,
    pub branches: Vec<BranchRecord>,
    pub extern_calls: Vec<ExternRecord>,
    pub frames: Vec<FrameRecord>,
    pub block_counts: Vec<BlockCount>,
    /// Labels of the entry function's top-level variables at exit.
    pub entry_var_labels: BTreeMap<String, Vec<String>>,
    /// Labels of the value the entry function returned.
    pub return_labels: Vec<String>,
    pub warnings: Vec<String>,
}

impl TraceReport {
    pub fn loop_record(&self, node_id: NodeId, call_path: &CallPath) -> Option<&LoopRecord> {
        self.loops
            .iter()
            .find(|l| l.node_id == node_id && l.call_path == *call_path)
    }

    pub fn frame(&self, function: &str, call_path: &CallPath) -> Option<&FrameRecord> {
        self.frames
            .iter()
            .find(|f| f.function == function && f.call_path == *call_path)
    }

    pub fn block_count(&self, node_id: NodeId, call_path: &CallPath) -> u64 {
        self.block_counts
            .iter()
            .find(|b| b.node_id == node_id && b.call_path == *call_path)
            .map(|b| b.count)
            .unwrap_or(0)
    }

    pub fn extern_record(&self, node_id: NodeId, call_path: &CallPath) -> Option<&ExternRecord> {
        self.extern_calls
            .iter()
            .find(|e| e.node_id == node_id && e.call_path == *call_path)
    }

    /// Total trips keyed by loop identity, the perturbation oracle's currency.
    pub fn trip_map(&self) -> BTreeMap<(NodeId, CallPath), u64> {
        self.loops
            .iter()
            .map(|l| ((l.node_id, l.call_path.clone()), l.total_trips))
            .collect()
    }
}

/// Runtime failure, with enough context to find the site.
#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("no value for parameter `{0}` (pass --param {0}=VALUE)")]
    MissingParam(String),
    #[error("missing entry function `{0}`")]
    MissingEntry(String),
    #[error("{span}: unknown variable `{name}` in `{function}` (call path `{path}`)")]
    UnknownVariable {
        name: String,
        function: String,
        path: CallPath,
        span: Span,
    },
    #[error("{span}: `{name}` is an array, used as a scalar in `{function}`")]
    ArrayAsScalar {
        name: String,
        function: String,
        span: Span,
    },
    #[error("{span}: `{name}` is a scalar, used as an array in `{function}`")]
    ScalarAsArray {
        name: String,
        function: String,
        span: Span,
    },
    #[error("{span}: array index {index} out of bounds for `{name}` (len {len}) in `{function}`")]
    IndexOutOfBounds {
        name: String,
        index: i64,
        len: usize,
        function: String,
        span: Span,
    },
    #[error("{span}: invalid array length {len} in `{function}`")]
    BadArrayLength {
        len: f64,
        function: String,
        span: Span,
    },
    #[error("{span}: division by zero in `{function}` (call path `{path}`)")]
    DivisionByZero {
        function: String,
        path: CallPath,
        span: Span,
    },
    #[error("{span}: {what} produced a non-finite value in `{function}`")]
    NonFinite {
        what: String,
        function: String,
        span: Span,
    },
    #[error("{span}: loop step must be a positive finite number in `{function}`")]
    InvalidStep { function: String, span: Span },
    #[error("{span}: loop exceeded guard of {guard} trips in `{function}` (call path `{path}`)")]
    LoopGuard {
        guard: u64,
        function: String,
        path: CallPath,
        span: Span,
    },
    #[error("{span}: extern `{name}` is not in the library DB")]
    UnknownExtern { name: String, span: Span },
    #[error("{span}: extern `{name}` takes {expected} argument(s), got {got}")]
    ExternArity {
        name: String,
        expected: usize,
        got: usize,
        span: Span,
    },
    #[error("{span}: extern `{name}` writes argument {arg}, which must be a plain variable")]
    SourceWriteTarget { name: String, arg: usize, span: Span },
    #[error("{span}: source() label `{label}` is not a declared param")]
    UnknownLabel { label: String, span: Span },
}

/// Run `program` under taint analysis with the given parameter values.
///
/// The program is assumed to have passed [`crate::validate::validate`].
/// Entry-function formals are bound by name from `params` and labeled with
/// their own names; those bindings are the taint sources.
pub fn run(
    program: &Program,
    db: &LibraryDB,
    params: &BTreeMap<String, f64>,
    opts: &RunOptions,
) -> Result<TraceReport, RuntimeError> {
    let entry = program
        .entry_function()
        .ok_or_else(|| RuntimeError::MissingEntry(program.entry.clone()))?;

    let mut interp = Interp {
        program,
        db,
        params,
        opts,
        loops: BTreeMap::new(),
        branches: BTreeMap::new(),
        externs: BTreeMap::new(),
        frames: BTreeMap::new(),
        blocks: BTreeMap::new(),
        warnings: Vec::new(),
        warned: BTreeSet::new(),
        call_stack: Vec::new(),
        entry_body_id: entry.body.id,
        entry_vars: BTreeMap::new(),
    };

    let mut frame = Frame::new(&entry.name);
    let mut formals = BTreeMap::new();
    for name in &entry.params {
        let value = *params
            .get(name)
            .ok_or_else(|| RuntimeError::MissingParam(name.clone()))?;
        formals.insert(
            name.clone(),
            Slot {
                value: Value::Num(value),
                labels: LabelSet::singleton(name.clone()),
            },
        );
    }
    frame.env.push(formals);

    interp.call_stack.push(entry.name.clone());
    let (_, return_labels) = interp.exec_function(entry, &mut frame, &CallPath::root())?;
    interp.call_stack.pop();

    Ok(TraceReport {
        schema_version: SCHEMA_VERSION,
        entry: program.entry.clone(),
        param_values: params.clone(),
        implicit_flows: opts.implicit_flows,
        loops: interp
            .loops
            .into_iter()
            .map(|((node_id, call_path), a)| LoopRecord {
                node_id,
                call_path,
                labels: a.labels.to_vec(),
                direct_labels: a.direct.to_vec(),
                entries: a.entries,
                total_trips: a.total,
                max_trips: a.max,
            })
            .collect(),
        branches: interp
            .branches
            .into_iter()
            .map(|((node_id, call_path), a)| BranchRecord {
                node_id,
                call_path,
                labels: a.labels.to_vec(),
                taken: a.taken,
                not_taken: a.not_taken,
            })
            .collect(),
        extern_calls: interp
            .externs
            .into_iter()
            .map(|((node_id, call_path), a)| ExternRecord {
                node_id,
                call_path,
                name: a.name,
                atoms: a.atoms.into_iter().map(|s| s.to_vec()).collect(),
                loop_hint: a.hint,
            })
            .collect(),
        frames: interp
            .frames
            .into_iter()
            .map(|((function, call_path), invocations)| FrameRecord {
                function,
                call_path,
                invocations,
            })
            .collect(),
        block_counts: interp
            .blocks
            .into_iter()
            .map(|((node_id, call_path), count)| BlockCount {
                node_id,
                call_path,
                count,
            })
            .collect(),
        entry_var_labels: interp
            .entry_vars
            .into_iter()
            .map(|(k, v)| (k, v.to_vec()))
            .collect(),
        return_labels: return_labels.to_vec(),
        warnings: interp.warnings,
    })
}

#[derive(Debug, Clone)]
enum Value {
    Num(f64),
    Array(Vec<f64>),
}

#[derive(Debug, Clone)]
struct Slot {
    value: Value,
    labels: LabelSet,
}

/// Why a control context is on the stack — loop conditions are subtracted
/// when computing a nested loop's direct labels, branch gates are not.
#[derive(Clone, Copy, PartialEq)]
enum ControlKind {
    Branch,
    Loop,
}

/// One activation: lexical scopes plus the control-context stack.
struct Frame {
    function: String,
    env: Vec<BTreeMap<String, Slot>>,
    control: Vec<(ControlKind, LabelSet)>,
}

impl Frame {
    fn new(function: &str) -> Self {
        Frame {
            function: function.to_string(),
            env: Vec::new(),
            control: Vec::new(),
        }
    }

    fn resolve(&self, name: &str) -> Option<&Slot> {
        self.env.iter().rev().find_map(|s| s.get(name))
    }

    fn resolve_mut(&mut self, name: &str) -> Option<&mut Slot> {
        self.env.iter_mut().rev().find_map(|s| s.get_mut(name))
    }

    fn declare(&mut self, name: &str, slot: Slot) {
        self.env
            .last_mut()
            .expect("declare outside any scope")
            .insert(name.to_string(), slot);
    }

    /// Union of all active control contexts: what a write picks up.
    fn control_union(&self) -> LabelSet {
        let mut u = LabelSet::new();
        for (_, c) in &self.control {
            u.union_with(c);
        }
        u
    }

    /// Union of enclosing loop conditions only.
    fn loop_control_union(&self) -> LabelSet {
        let mut u = LabelSet::new();
        for (kind, c) in &self.control {
            if *kind == ControlKind::Loop {
                u.union_with(c);
            }
        }
        u
    }
}

enum Exec {
    Normal,
    Return(f64, LabelSet),
}

#[derive(Default)]
struct LoopAgg {
    labels: LabelSet,
    direct: LabelSet,
    entries: u64,
    total: u64,
    max: u64,
}

#[derive(Default)]
struct BranchAgg {
    labels: LabelSet,
    taken: u64,
    not_taken: u64,
}

struct ExternAgg {
    name: String,
    atoms: Vec<LabelSet>,
    hint: Option<String>,
}

struct Interp<'a> {
    program: &'a Program,
    db: &'a LibraryDB,
    params: &'a BTreeMap<String, f64>,
    opts: &'a RunOptions,
    loops: BTreeMap<(NodeId, CallPath), LoopAgg>,
    branches: BTreeMap<(NodeId, CallPath), BranchAgg>,
    externs: BTreeMap<(NodeId, CallPath), ExternAgg>,
    frames: BTreeMap<(String, CallPath), u64>,
    blocks: BTreeMap<(NodeId, CallPath), u64>,
    warnings: Vec<String>,
    warned: BTreeSet<String>,
    call_stack: Vec<String>,
    entry_body_id: NodeId,
    entry_vars: BTreeMap<String, LabelSet>,
}

impl<'a> Interp<'a> {
    fn exec_function(
        &mut self,
        func: &'a Function,
        frame: &mut Frame,
        path: &CallPath,
    ) -> Result<(f64, LabelSet), RuntimeError> {
        *self
            .frames
            .entry((func.name.clone(), path.clone()))
            .or_insert(0) += 1;
        match self.exec_block(&func.body, frame, path)? {
            Exec::Return(v, l) => Ok((v, l)),
            Exec::Normal => Ok((0.0, LabelSet::new())),
        }
    }

    fn exec_block(
        &mut self,
        block: &'a Block,
        frame: &mut Frame,
        path: &CallPath,
    ) -> Result<Exec, RuntimeError> {
        *self.blocks.entry((block.id, path.clone())).or_insert(0) += 1;
        frame.env.push(BTreeMap::new());
        let mut result = Exec::Normal;
        for stmt in &block.stmts {
            match self.exec_stmt(stmt, frame, path)? {
                Exec::Normal => {}
                ret => {
                    result = ret;
                    break;
                }
            }
        }
        if block.id == self.entry_body_id {
            self.capture_entry_vars(frame);
        }
        frame.env.pop();
        Ok(result)
    }

    /// Flatten the entry frame's live variables (innermost binding wins).
    fn capture_entry_vars(&mut self, frame: &Frame) {
        let mut flat: BTreeMap<String, LabelSet> = BTreeMap::new();
        for scope in &frame.env {
            for (name, slot) in scope {
                flat.insert(name.clone(), slot.labels.clone());
            }
        }
        self.entry_vars = flat;
    }

    fn exec_stmt(
        &mut self,
        stmt: &'a Stmt,
        frame: &mut Frame,
        path: &CallPath,
    ) -> Result<Exec, RuntimeError> {
        match &stmt.kind {
            StmtKind::Let { name, init } => {
                let (v, l) = self.eval(init, frame, path)?;
                frame.declare(
                    name,
                    Slot {
                        value: Value::Num(v),
                        labels: l,
                    },
                );
                Ok(Exec::Normal)
            }
            StmtKind::LetArray { name, init, len } => {
                let (iv, il) = self.eval(init, frame, path)?;
                let (lv, ll) = self.eval(len, frame, path)?;
                if !lv.is_finite() || lv < 0.0 || lv > 1e8 {
                    return Err(RuntimeError::BadArrayLength {
                        len: lv,
                        function: frame.function.clone(),
                        span: stmt.span,
                    });
                }
                let n = lv.floor() as usize;
                frame.declare(
                    name,
                    Slot {
                        value: Value::Array(vec![iv; n]),
                        labels: il.union(&ll),
                    },
                );
                Ok(Exec::Normal)
            }
            StmtKind::Assign { name, value } => {
                let (v, l) = self.eval(value, frame, path)?;
                let function = frame.function.clone();
                let slot = frame.resolve_mut(name).ok_or_else(|| {
                    RuntimeError::UnknownVariable {
                        name: name.clone(),
                        function: function.clone(),
                        path: path.clone(),
                        span: stmt.span,
                    }
                })?;
                if matches!(slot.value, Value::Array(_)) {
                    return Err(RuntimeError::ArrayAsScalar {
                        name: name.clone(),
                        function,
                        span: stmt.span,
                    });
                }
                // Strong update: an assignment replaces value and labels.
                slot.value = Value::Num(v);
                slot.labels = l;
                Ok(Exec::Normal)
            }
            StmtKind::AssignIndex { name, index, value } => {
                let (idx, idx_l) = self.eval(index, frame, path)?;
                let (v, v_l) = self.eval(value, frame, path)?;
                let function = frame.function.clone();
                let slot = frame.resolve_mut(name).ok_or_else(|| {
                    RuntimeError::UnknownVariable {
                        name: name.clone(),
                        function: function.clone(),
                        path: path.clone(),
                        span: stmt.span,
                    }
                })?;
                let Value::Array(items) = &mut slot.value else {
                    return Err(RuntimeError::ScalarAsArray {
                        name: name.clone(),
                        function,
                        span: stmt.span,
                    });
                };
                let i = idx.floor() as i64;
                if !idx.is_finite() || i < 0 || i as usize >= items.len() {
                    return Err(RuntimeError::IndexOutOfBounds {
                        name: name.clone(),
                        index: i,
                        len: items.len(),
                        function,
                        span: stmt.span,
                    });
                }
                items[i as usize] = v;
                // Weak update: the array keeps one label set; element writes
                // union in the value and index labels.
                slot.labels.union_with(&idx_l);
                slot.labels.union_with(&v_l);
                Ok(Exec::Normal)
            }
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                let (c, cl) = self.eval(cond, frame, path)?;
                let taken = c != 0.0;
                if !cl.is_empty() {
                    let agg = self.branches.entry((stmt.id, path.clone())).or_default();
                    agg.labels.union_with(&cl);
                    if taken {
                        agg.taken += 1;
                    } else {
                        agg.not_taken += 1;
                    }
                }
                frame.control.push((ControlKind::Branch, cl.clone()));
                let exec = if taken {
                    self.exec_block(then_block, frame, path)?
                } else if let Some(e) = else_block {
                    self.exec_block(e, frame, path)?
                } else {
                    Exec::Normal
                };
                frame.control.pop();
                if self.opts.implicit_flows && !cl.is_empty() {
                    // Both arms: the taken arm's writes already carry the
                    // labels (idempotent), the untaken arm's are the point.
                    self.union_into_write_set(then_block, &cl, frame);
                    if let Some(e) = else_block {
                        self.union_into_write_set(e, &cl, frame);
                    }
                }
                Ok(exec)
            }
            StmtKind::While { cond, body } => {
                let mut merged = LabelSet::new();
                let mut trips = 0u64;
                let mut early: Option<Exec> = None;
                loop {
                    let (c, cl) = self.eval(cond, frame, path)?;
                    merged.union_with(&cl);
                    if c == 0.0 {
                        break;
                    }
                    if trips >= self.opts.loop_guard {
                        return Err(RuntimeError::LoopGuard {
                            guard: self.opts.loop_guard,
                            function: frame.function.clone(),
                            path: path.clone(),
                            span: stmt.span,
                        });
                    }
                    frame.control.push((ControlKind::Loop, cl));
                    let exec = self.exec_block(body, frame, path)?;
                    frame.control.pop();
                    trips += 1;
                    if let Exec::Return(..) = exec {
                        early = Some(exec);
                        break;
                    }
                }
                self.record_loop(stmt.id, path, &merged, trips, frame);
                if self.opts.implicit_flows && !merged.is_empty() {
                    self.union_into_write_set(body, &merged, frame);
                }
                Ok(early.unwrap_or(Exec::Normal))
            }
            StmtKind::For {
                var,
                from,
                to,
                step,
                body,
            } => {
                let (from_v, from_l) = self.eval(from, frame, path)?;
                let (to_v, to_l) = self.eval(to, frame, path)?;
                let (step_v, step_l) = match step {
                    None => (1.0, LabelSet::new()),
                    Some(s) => self.eval(s, frame, path)?,
                };
                if !step_v.is_finite() || step_v <= 0.0 {
                    return Err(RuntimeError::InvalidStep {
                        function: frame.function.clone(),
                        span: stmt.span,
                    });
                }
                frame.env.push(BTreeMap::new());
                frame.declare(
                    var,
                    Slot {
                        value: Value::Num(from_v),
                        labels: from_l,
                    },
                );
                let mut merged = LabelSet::new();
                let mut trips = 0u64;
                let mut early: Option<Exec> = None;
                loop {
                    let (i_v, i_l) = {
                        let slot = frame.resolve(var).expect("loop var in scope");
                        let Value::Num(v) = slot.value else {
                            unreachable!("loop var is scalar")
                        };
                        (v, slot.labels.clone())
                    };
                    // Exit condition `i < to`: labels of the induction
                    // variable, the bound, and the control context.
                    let cl = i_l.union(&to_l).union(&frame.control_union());
                    merged.union_with(&cl);
                    if !(i_v < to_v) {
                        break;
                    }
                    if trips >= self.opts.loop_guard {
                        return Err(RuntimeError::LoopGuard {
                            guard: self.opts.loop_guard,
                            function: frame.function.clone(),
                            path: path.clone(),
                            span: stmt.span,
                        });
                    }
                    frame.control.push((ControlKind::Loop, cl));
                    let exec = self.exec_block(body, frame, path)?;
                    frame.control.pop();
                    trips += 1;
                    if let Exec::Return(..) = exec {
                        early = Some(exec);
                        break;
                    }
                    // i = i + step, under the loop's control context.
                    let inc_labels = step_l.clone().union(&frame.control_union());
                    let slot = frame.resolve_mut(var).expect("loop var in scope");
                    let Value::Num(v) = slot.value else {
                        unreachable!("loop var is scalar")
                    };
                    slot.value = Value::Num(v + step_v);
                    slot.labels.union_with(&inc_labels);
                }
                frame.env.pop();
                self.record_loop(stmt.id, path, &merged, trips, frame);
                if self.opts.implicit_flows && !merged.is_empty() {
                    self.union_into_write_set(body, &merged, frame);
                }
                Ok(early.unwrap_or(Exec::Normal))
            }
            StmtKind::Return { value } => match value {
                None => Ok(Exec::Return(0.0, frame.control_union())),
                Some(v) => {
                    let (val, l) = self.eval(v, frame, path)?;
                    Ok(Exec::Return(val, l))
                }
            },
            StmtKind::Source { var, label } => {
                if self.program.param(label).is_none() && !self.db.implicit_params().contains(label)
                {
                    return Err(RuntimeError::UnknownLabel {
                        label: label.clone(),
                        span: stmt.span,
                    });
                }
                let function = frame.function.clone();
                let slot = frame.resolve_mut(var).ok_or_else(|| {
                    RuntimeError::UnknownVariable {
                        name: var.clone(),
                        function,
                        path: path.clone(),
                        span: stmt.span,
                    }
                })?;
                // Marking is a union, so marking twice is a no-op.
                slot.labels.insert(label.clone());
                Ok(Exec::Normal)
            }
            StmtKind::Expr { expr } => {
                self.eval(expr, frame, path)?;
                Ok(Exec::Normal)
            }
        }
    }

    fn record_loop(
        &mut self,
        node: NodeId,
        path: &CallPath,
        labels: &LabelSet,
        trips: u64,
        frame: &Frame,
    ) {
        let direct = labels.difference(&frame.loop_control_union());
        let agg = self.loops.entry((node, path.clone())).or_default();
        agg.labels.union_with(labels);
        agg.direct.union_with(&direct);
        agg.entries += 1;
        agg.total += trips;
        agg.max = agg.max.max(trips);
    }

    /// Union `labels` into every variable of `block`'s static write set that
    /// resolves in the current environment (implicit control flow).
    fn union_into_write_set(&mut self, block: &Block, labels: &LabelSet, frame: &mut Frame) {
        for name in write_set(block) {
            if let Some(slot) = frame.resolve_mut(&name) {
                slot.labels.union_with(labels);
            }
        }
    }

    fn eval(
        &mut self,
        expr: &'a Expr,
        frame: &mut Frame,
        path: &CallPath,
    ) -> Result<(f64, LabelSet), RuntimeError> {
        let (v, l) = self.eval_inner(expr, frame, path)?;
        // Every evaluated value carries the active control context.
        Ok((v, l.union(&frame.control_union())))
    }

    fn eval_inner(
        &mut self,
        expr: &'a Expr,
        frame: &mut Frame,
        path: &CallPath,
    ) -> Result<(f64, LabelSet), RuntimeError> {
        match &expr.kind {
            ExprKind::Number(n) => Ok((*n, LabelSet::new())),
            ExprKind::Var(name) => {
                let slot = frame.resolve(name).ok_or_else(|| {
                    RuntimeError::UnknownVariable {
                        name: name.clone(),
                        function: frame.function.clone(),
                        path: path.clone(),
                        span: expr.span,
                    }
                })?;
                match &slot.value {
                    Value::Num(v) => Ok((*v, slot.labels.clone())),
                    Value::Array(_) => Err(RuntimeError::ArrayAsScalar {
                        name: name.clone(),
                        function: frame.function.clone(),
                        span: expr.span,
                    }),
                }
            }
            ExprKind::Unary { op, operand } => {
                let (v, l) = self.eval(operand, frame, path)?;
                let r = match op {
                    UnOp::Neg => -v,
                    UnOp::Not => {
                        if v == 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                Ok((r, l))
            }
            ExprKind::Binary { op, lhs, rhs } => {
                // Both operands always evaluate (`&&`/`||` do not short-circuit).
                let (a, la) = self.eval(lhs, frame, path)?;
                let (b, lb) = self.eval(rhs, frame, path)?;
                let labels = la.union(&lb);
                let v = match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div | BinOp::Mod => {
                        if b == 0.0 {
                            return Err(RuntimeError::DivisionByZero {
                                function: frame.function.clone(),
                                path: path.clone(),
                                span: expr.span,
                            });
                        }
                        if matches!(op, BinOp::Div) {
                            a / b
                        } else {
                            a % b
                        }
                    }
                    BinOp::Eq => bool_num(a == b),
                    BinOp::Ne => bool_num(a != b),
                    BinOp::Lt => bool_num(a < b),
                    BinOp::Le => bool_num(a <= b),
                    BinOp::Gt => bool_num(a > b),
                    BinOp::Ge => bool_num(a >= b),
                    BinOp::And => bool_num(a != 0.0 && b != 0.0),
                    BinOp::Or => bool_num(a != 0.0 || b != 0.0),
                };
                if !v.is_finite() {
                    return Err(RuntimeError::NonFinite {
                        what: format!("`{}`", op.symbol()),
                        function: frame.function.clone(),
                        span: expr.span,
                    });
                }
                Ok((v, labels))
            }
            ExprKind::Builtin { builtin, args } => {
                let mut vals = Vec::with_capacity(args.len());
                let mut labels = LabelSet::new();
                for a in args {
                    let (v, l) = self.eval(a, frame, path)?;
                    vals.push(v);
                    labels.union_with(&l);
                }
                let v = match builtin {
                    Builtin::Pow => vals[0].powf(vals[1]),
                    Builtin::Log => {
                        if vals[0] <= 0.0 {
                            return Err(RuntimeError::NonFinite {
                                what: format!("log({})", vals[0]),
                                function: frame.function.clone(),
                                span: expr.span,
                            });
                        }
                        vals[0].log2()
                    }
                    Builtin::Min => vals[0].min(vals[1]),
                    Builtin::Max => vals[0].max(vals[1]),
                };
                if !v.is_finite() {
                    return Err(RuntimeError::NonFinite {
                        what: format!("{}()", builtin.name()),
                        function: frame.function.clone(),
                        span: expr.span,
                    });
                }
                Ok((v, labels))
            }
            ExprKind::Call { name, args } => self.eval_call(expr, name, args, frame, path),
            ExprKind::Extern { name, args } => self.eval_extern(expr, name, args, frame, path),
            ExprKind::Index { name, index } => {
                let (idx, idx_l) = self.eval(index, frame, path)?;
                let slot = frame.resolve(name).ok_or_else(|| {
                    RuntimeError::UnknownVariable {
                        name: name.clone(),
                        function: frame.function.clone(),
                        path: path.clone(),
                        span: expr.span,
                    }
                })?;
                let Value::Array(items) = &slot.value else {
                    return Err(RuntimeError::ScalarAsArray {
                        name: name.clone(),
                        function: frame.function.clone(),
                        span: expr.span,
                    });
                };
                let i = idx.floor() as i64;
                if !idx.is_finite() || i < 0 || i as usize >= items.len() {
                    return Err(RuntimeError::IndexOutOfBounds {
                        name: name.clone(),
                        index: i,
                        len: items.len(),
                        function: frame.function.clone(),
                        span: expr.span,
                    });
                }
                // An element read depends on the array and on the index.
                Ok((items[i as usize], slot.labels.clone().union(&idx_l)))
            }
        }
    }

    fn eval_call(
        &mut self,
        expr: &'a Expr,
        name: &str,
        args: &'a [Expr],
        frame: &mut Frame,
        path: &CallPath,
    ) -> Result<(f64, LabelSet), RuntimeError> {
        let mut arg_slots = Vec::with_capacity(args.len());
        let mut arg_union = LabelSet::new();
        for a in args {
            let (v, l) = self.eval(a, frame, path)?;
            arg_union.union_with(&l);
            arg_slots.push((v, l));
        }

        if self.call_stack.iter().any(|f| f == name) {
            // Recursion: treat the call as opaque. The result is labeled with
            // the union of argument labels — a deliberate over-approximation.
            if self.warned.insert(name.to_string()) {
                self.warnings.push(format!(
                    "recursive call to `{name}` treated as opaque (returns 0 labeled with its argument labels); loops inside the recursion are not analyzed"
                ));
            }
            return Ok((0.0, arg_union));
        }

        let func = self
            .program
            .function(name)
            .unwrap_or_else(|| panic!("call to `{name}` survived validation"));
        let child_path = path.child(expr.id);
        let mut callee = Frame::new(&func.name);
        // Control context crosses the call: everything the callee does happens
        // under the caller's active branches and loops. Kinds are preserved so
        // callee loops subtract enclosing-loop labels the same way.
        let inherited_loops = frame.loop_control_union();
        if !inherited_loops.is_empty() {
            callee.control.push((ControlKind::Loop, inherited_loops));
        }
        let inherited_branches = frame.control_union().difference(&frame.loop_control_union());
        if !inherited_branches.is_empty() {
            callee
                .control
                .push((ControlKind::Branch, inherited_branches));
        }
        let mut formals = BTreeMap::new();
        for (formal, (v, l)) in func.params.iter().zip(arg_slots) {
            formals.insert(
                formal.clone(),
                Slot {
                    value: Value::Num(v),
                    labels: l,
                },
            );
        }
        callee.env.push(formals);
        self.call_stack.push(func.name.clone());
        let result = self.exec_function(func, &mut callee, &child_path);
        self.call_stack.pop();
        result
    }

    fn eval_extern(
        &mut self,
        expr: &'a Expr,
        name: &str,
        args: &'a [Expr],
        frame: &mut Frame,
        path: &CallPath,
    ) -> Result<(f64, LabelSet), RuntimeError> {
        let entry = self.db.get(name).ok_or_else(|| RuntimeError::UnknownExtern {
            name: name.to_string(),
            span: expr.span,
        })?;
        if args.len() != entry.arity {
            return Err(RuntimeError::ExternArity {
                name: name.to_string(),
                expected: entry.arity,
                got: args.len(),
                span: expr.span,
            });
        }
        let mut arg_labels = Vec::with_capacity(args.len());
        for a in args {
            let (_, l) = self.eval(a, frame, path)?;
            arg_labels.push(l);
        }

        // Source writes: the routine stores a labeled parameter value into a
        // variable argument (e.g. a process count written through a pointer).
        for sw in &entry.source_writes {
            let ExprKind::Var(var) = &args[sw.arg].kind else {
                return Err(RuntimeError::SourceWriteTarget {
                    name: name.to_string(),
                    arg: sw.arg,
                    span: args[sw.arg].span,
                });
            };
            let value = *self
                .params
                .get(&sw.label)
                .ok_or_else(|| RuntimeError::MissingParam(sw.label.clone()))?;
            let labels = LabelSet::singleton(sw.label.clone()).union(&frame.control_union());
            let function = frame.function.clone();
            let slot = frame.resolve_mut(var).ok_or_else(|| {
                RuntimeError::UnknownVariable {
                    name: var.clone(),
                    function,
                    path: path.clone(),
                    span: args[sw.arg].span,
                }
            })?;
            slot.value = Value::Num(value);
            slot.labels = labels;
        }

        // Dependency atoms, resolved against runtime argument labels.
        let atoms: Vec<LabelSet> = entry
            .dep_template
            .iter()
            .map(|atom| match atom {
                DepAtom::Param(p) => LabelSet::singleton(p.clone()),
                DepAtom::ArgLabels(k) => arg_labels[*k].clone(),
            })
            .collect();
        let agg = self
            .externs
            .entry((expr.id, path.clone()))
            .or_insert_with(|| ExternAgg {
                name: name.to_string(),
                atoms: vec![LabelSet::new(); atoms.len()],
                hint: entry.loop_semantics.clone(),
            });
        for (slot, atom) in agg.atoms.iter_mut().zip(&atoms) {
            slot.union_with(atom);
        }

        // Library routines return a status code: value 0, no data labels.
        Ok((0.0, LabelSet::new()))
    }
}

fn bool_num(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Ground truth for taint soundness: rerun the program with each parameter
/// multiplied by each factor (others fixed) and report a parameter as
/// influencing a loop iff any such rerun changes the loop's total trip count.
#[derive(Debug, Clone)]
pub struct PerturbationOracle {
    /// Loops observed in the base run.
    pub base_loops: BTreeSet<(NodeId, CallPath)>,
    /// Parameters that changed each loop's trip count, keyed by loop identity
    /// (loops only seen in perturbed runs included).
    pub influences: BTreeMap<(NodeId, CallPath), LabelSet>,
}

pub fn perturbation_oracle(
    program: &Program,
    db: &LibraryDB,
    base: &BTreeMap<String, f64>,
    factors: &[f64],
    opts: &RunOptions,
) -> Result<PerturbationOracle, RuntimeError> {
    let base_trace = run(program, db, base, opts)?;
    let base_trips = base_trace.trip_map();
    let mut influences: BTreeMap<(NodeId, CallPath), LabelSet> = BTreeMap::new();
    for key in base_trips.keys() {
        influences.entry(key.clone()).or_default();
    }
    for (name, &value) in base {
        for &factor in factors {
            let mut params = base.clone();
            params.insert(name.clone(), value * factor);
            let trace = run(program, db, &params, opts)?;
            let trips = trace.trip_map();
            let keys: BTreeSet<_> = base_trips.keys().chain(trips.keys()).cloned().collect();
            for key in keys {
                let a = base_trips.get(&key).copied().unwrap_or(0);
                let b = trips.get(&key).copied().unwrap_or(0);
                if a != b {
                    influences.entry(key).or_default().insert(name.clone());
                }
            }
        }
    }
    Ok(PerturbationOracle {
        base_loops: base_trips.into_keys().collect(),
        influences,
    })
}
