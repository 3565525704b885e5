//! Static validation of parsed programs.
//!
//! Validation is the gate between parsing and execution: it resolves call
//! targets (program functions and library-DB externs), checks writes against
//! lexical scope, cross-checks parameter declarations, detects static
//! recursion cycles (warnings — the runtime treats recursive calls as opaque),
//! and identifies constant-trip `for` loops so later stages can fold them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::ast::*;
use crate::libdb::LibraryDB;

/// One diagnostic with a source position.
#[derive(Debug, Clone)]
pub struct ValidationIssue {
    pub message: String,
    pub span: Span,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.span, self.message)
    }
}

/// Outcome of validating a program against a library DB.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub errors: Vec<ValidationIssue>,
    pub warnings: Vec<ValidationIssue>,
    /// `for` loops with literal bounds/step whose variable the body never
    /// writes, mapped to their statically known trip count.
    pub constant_loops: BTreeMap<NodeId, u64>,
    /// Functions that sit on a static call cycle.
    pub recursive_functions: BTreeSet<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, span: Span, message: impl Into<String>) {
        self.errors.push(ValidationIssue {
            message: message.into(),
            span,
        });
    }

    fn warn(&mut self, span: Span, message: impl Into<String>) {
        self.warnings.push(ValidationIssue {
            message: message.into(),
            span,
        });
    }
}

/// Validate `program` against `db`. Pass [`LibraryDB::empty`] when no DB is
/// in play; extern calls then fail to resolve, which is the point.
pub fn validate(program: &Program, db: &LibraryDB) -> ValidationReport {
    let mut report = ValidationReport::default();

    // Parameter declarations: unique; implicit ones must be backed by the DB.
    let mut seen_params = BTreeSet::new();
    for p in &program.params {
        if !seen_params.insert(p.name.clone()) {
            report.error(p.span, format!("duplicate param declaration `{}`", p.name));
        }
        if p.implicit && !db.implicit_params().contains(&p.name) {
            report.error(
                p.span,
                format!(
                    "implicit param `{}` is not declared by any library DB entry",
                    p.name
                ),
            );
        }
    }
    let db_implicit = db.implicit_params();
    let known_labels: BTreeSet<String> = program
        .params
        .iter()
        .map(|p| p.name.clone())
        .chain(db_implicit.iter().map(|s| s.to_string()))
        .collect();
    let explicit_params: BTreeSet<&str> = program
        .params
        .iter()
        .filter(|p| !p.implicit)
        .map(|p| p.name.as_str())
        .collect();

    // Function table: unique names, formals unique.
    let mut fn_names = BTreeSet::new();
    for f in &program.functions {
        if !fn_names.insert(f.name.as_str()) {
            report.error(f.span, format!("duplicate function definition `{}`", f.name));
        }
        let mut formals = BTreeSet::new();
        for a in &f.params {
            if !formals.insert(a.as_str()) {
                report.error(
                    f.span,
                    format!("duplicate parameter `{a}` in function `{}`", f.name),
                );
            }
        }
    }

    // Entry: must exist; its formals name declared explicit params.
    match program.entry_function() {
        None => {
            report.error(
                Span::default(),
                format!("missing entry function `{}`", program.entry),
            );
        }
        Some(entry) => {
            for a in &entry.params {
                match program.param(a) {
                    None => report.error(
                        entry.span,
                        format!(
                            "entry parameter `{a}` is not a declared `param`; add `param {a};`"
                        ),
                    ),
                    Some(d) if d.implicit => report.error(
                        entry.span,
                        format!(
                            "entry parameter `{a}` is implicit; implicit params arrive via library calls, not the entry signature"
                        ),
                    ),
                    Some(_) => {}
                }
            }
            let _ = &explicit_params; // explicit set retained for future checks
        }
    }

    // Per-function body checks.
    for f in &program.functions {
        let mut scopes: Vec<BTreeSet<String>> = vec![f.params.iter().cloned().collect()];
        check_block(&f.body, f, program, db, &known_labels, &mut scopes, &mut report);
    }

    // Static recursion cycles.
    find_cycles(program, &mut report);

    report
}

fn in_scope(scopes: &[BTreeSet<String>], name: &str) -> bool {
    scopes.iter().rev().any(|s| s.contains(name))
}

#[allow(clippy::too_many_arguments)]
fn check_block(
    block: &Block,
    func: &Function,
    program: &Program,
    db: &LibraryDB,
    known_labels: &BTreeSet<String>,
    scopes: &mut Vec<BTreeSet<String>>,
    report: &mut ValidationReport,
) {
    scopes.push(BTreeSet::new());
    for stmt in &block.stmts {
        check_exprs(stmt, func, program, db, report);
        match &stmt.kind {
            StmtKind::Let { name, .. } | StmtKind::LetArray { name, .. } => {
                scopes.last_mut().unwrap().insert(name.clone());
            }
            StmtKind::Assign { name, .. } | StmtKind::AssignIndex { name, .. } => {
                if !in_scope(scopes, name) {
                    report.error(
                        stmt.span,
                        format!(
                            "write to undeclared variable `{name}` in function `{}`",
                            func.name
                        ),
                    );
                }
            }
            StmtKind::Source { var, label } => {
                if !in_scope(scopes, var) {
                    report.error(
                        stmt.span,
                        format!(
                            "source() on undeclared variable `{var}` in function `{}`",
                            func.name
                        ),
                    );
                }
                if !known_labels.contains(label) {
                    report.error(
                        stmt.span,
                        format!("source() label `{label}` is not a declared param"),
                    );
                }
            }
            StmtKind::If {
                then_block,
                else_block,
                ..
            } => {
                check_block(then_block, func, program, db, known_labels, scopes, report);
                if let Some(e) = else_block {
                    check_block(e, func, program, db, known_labels, scopes, report);
                }
            }
            StmtKind::While { body, .. } => {
                check_block(body, func, program, db, known_labels, scopes, report);
            }
            StmtKind::For {
                var,
                from,
                to,
                step,
                body,
            } => {
                scopes.push(std::iter::once(var.clone()).collect());
                check_block(body, func, program, db, known_labels, scopes, report);
                scopes.pop();
                if let Some(trips) = constant_trip_count(from, to, step.as_ref()) {
                    if !write_set(body).contains(var) {
                        report.constant_loops.insert(stmt.id, trips);
                    }
                }
            }
            StmtKind::Return { .. } | StmtKind::Expr { .. } => {}
        }
    }
    scopes.pop();
}

fn check_exprs(
    stmt: &Stmt,
    func: &Function,
    program: &Program,
    db: &LibraryDB,
    report: &mut ValidationReport,
) {
    for_each_expr_in_stmt(stmt, &mut |e| match &e.kind {
        ExprKind::Call { name, args } => match program.function(name) {
            None => report.error(
                e.span,
                format!("call to unknown function `{name}` in `{}`", func.name),
            ),
            Some(target) => {
                if target.params.len() != args.len() {
                    report.error(
                        e.span,
                        format!(
                            "`{name}` takes {} argument(s), got {}",
                            target.params.len(),
                            args.len()
                        ),
                    );
                }
            }
        },
        ExprKind::Extern { name, .. } => {
            if !db.contains(name) {
                report.error(
                    e.span,
                    format!("extern `{name}` is not in the library DB"),
                );
            }
        }
        _ => {}
    });
}

/// Statically known trip count for a `for` loop with literal bounds and step.
fn constant_trip_count(from: &Expr, to: &Expr, step: Option<&Expr>) -> Option<u64> {
    let lit = |e: &Expr| match e.kind {
        ExprKind::Number(n) => Some(n),
        _ => None,
    };
    let from = lit(from)?;
    let to = lit(to)?;
    let step = match step {
        None => 1.0,
        Some(s) => lit(s)?,
    };
    if !(step > 0.0) || !from.is_finite() || !to.is_finite() {
        return None;
    }
    if to <= from {
        return Some(0);
    }
    Some(((to - from) / step).ceil() as u64)
}

/// DFS over the static call graph; every cycle found becomes a warning and
/// marks its members recursive.
fn find_cycles(program: &Program, report: &mut ValidationReport) {
    let mut graph: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for f in &program.functions {
        let callees = graph.entry(f.name.as_str()).or_default();
        for_each_stmt(&f.body, &mut |s| {
            for_each_expr_in_stmt(s, &mut |e| {
                if let ExprKind::Call { name, .. } = &e.kind {
                    if program.function(name).is_some() {
                        callees.insert(
                            program.function(name).map(|g| g.name.as_str()).unwrap(),
                        );
                    }
                }
            });
        });
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Gray,
        Black,
    }
    let mut marks: BTreeMap<&str, Mark> = graph.keys().map(|k| (*k, Mark::White)).collect();
    let mut stack: Vec<&str> = Vec::new();
    let mut cycles: Vec<Vec<String>> = Vec::new();

    fn dfs<'a>(
        node: &'a str,
        graph: &BTreeMap<&'a str, BTreeSet<&'a str>>,
        marks: &mut BTreeMap<&'a str, Mark>,
        stack: &mut Vec<&'a str>,
        cycles: &mut Vec<Vec<String>>,
    ) {
        marks.insert(node, Mark::Gray);
        stack.push(node);
        if let Some(callees) = graph.get(node) {
            for &callee in callees {
                match marks.get(callee).copied().unwrap_or(Mark::White) {
                    Mark::White => dfs(callee, graph, marks, stack, cycles),
                    Mark::Gray => {
                        let start = stack.iter().position(|&n| n == callee).unwrap();
                        let mut cycle: Vec<String> =
                            stack[start..].iter().map(|s| s.to_string()).collect();
                        cycle.push(callee.to_string());
                        cycles.push(cycle);
                    }
                    Mark::Black => {}
                }
            }
        }
        stack.pop();
        marks.insert(node, Mark::Black);
    }

    let names: Vec<&str> = graph.keys().copied().collect();
    for name in names {
        if marks[name] == Mark::White {
            dfs(name, &graph, &mut marks, &mut stack, &mut cycles);
        }
    }

    for cycle in cycles {
        for member in &cycle {
            report.recursive_functions.insert(member.clone());
        }
        let span = program
            .function(&cycle[0])
            .map(|f| f.span)
            .unwrap_or_default();
        report.warn(
            span,
            format!(
                "recursion cycle: {} (recursive calls run as opaque at runtime)",
                cycle.join(" -> ")
            ),
        );
    }
}
