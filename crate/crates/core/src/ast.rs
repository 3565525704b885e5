//! Abstract syntax for PTL, the small imperative language the toolkit analyzes.
//!
//! Every block, statement, and expression carries a [`NodeId`] assigned in
//! source order by the parser. Node ids are the stable identity used by the
//! taint trace (loop ids, call-site ids in call paths), so two parses of the
//! same source always agree on them.

use std::collections::BTreeSet;
use std::fmt;

/// Stable identity of an AST node within one parsed program.
pub type NodeId = u32;

/// Source position, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// A whole program: parameter declarations plus function definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub params: Vec<ParamDecl>,
    pub functions: Vec<Function>,
    /// Name of the entry function; fixed to `main`.
    pub entry: String,
}

/// Declaration of one performance parameter.
///
/// Explicit parameters receive values from the run configuration and are bound
/// to the entry function's formals by name. Implicit parameters are introduced
/// by library-DB entries (their declaration here is optional documentation and
/// is cross-checked against the DB).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub implicit: bool,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Function {
    pub id: NodeId,
    pub name: String,
    pub params: Vec<String>,
    pub body: Block,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: NodeId,
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub id: NodeId,
    pub span: Span,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    /// `let x = expr;`
    Let { name: String, init: Expr },
    /// `let a = [init; len];` — array of `len` copies of `init`.
    LetArray { name: String, init: Expr, len: Expr },
    /// `x = expr;`
    Assign { name: String, value: Expr },
    /// `a[i] = expr;`
    AssignIndex { name: String, index: Expr, value: Expr },
    /// `if cond { .. } else { .. }` — `else if` chains desugar to a nested `if`
    /// as the sole statement of the else block.
    If {
        cond: Expr,
        then_block: Block,
        else_block: Option<Block>,
    },
    /// `while cond { .. }`
    While { cond: Expr, body: Block },
    /// `for i in from..to { .. }` or `for i in from..to step s { .. }`.
    /// Bounds and step are evaluated once at loop entry; the induction
    /// variable is scoped to the body.
    For {
        var: String,
        from: Expr,
        to: Expr,
        step: Option<Expr>,
        body: Block,
    },
    /// `return expr;` / `return;`
    Return { value: Option<Expr> },
    /// `source(x, "size");` — manually mark a variable as carrying a label.
    Source { var: String, label: String },
    /// Expression statement, typically a call.
    Expr { expr: Expr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub id: NodeId,
    pub span: Span,
    pub kind: ExprKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Number(f64),
    Var(String),
    Unary {
        op: UnOp,
        operand: Box<Expr>,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    /// Call to a program-defined function. The expression's own node id is the
    /// call-site id pushed onto the call path.
    Call {
        name: String,
        args: Vec<Expr>,
    },
    Builtin {
        builtin: Builtin,
        args: Vec<Expr>,
    },
    /// `extern("Name", args...)` — call into the library DB.
    Extern {
        name: String,
        args: Vec<Expr>,
    },
    /// Array element read `a[i]`.
    Index {
        name: String,
        index: Box<Expr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

/// Built-in numeric functions. `log` is log base 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Pow,
    Log,
    Min,
    Max,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::Pow => "pow",
            Builtin::Log => "log",
            Builtin::Min => "min",
            Builtin::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Builtin::Pow | Builtin::Min | Builtin::Max => 2,
            Builtin::Log => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        match name {
            "pow" => Some(Builtin::Pow),
            "log" => Some(Builtin::Log),
            "min" => Some(Builtin::Min),
            "max" => Some(Builtin::Max),
            _ => None,
        }
    }
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn entry_function(&self) -> Option<&Function> {
        self.function(&self.entry)
    }

    pub fn param(&self, name: &str) -> Option<&ParamDecl> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of loop statements (`for` + `while`) in the program.
    pub fn loop_count(&self) -> usize {
        let mut n = 0;
        for f in &self.functions {
            for_each_stmt(&f.body, &mut |s| {
                if matches!(s.kind, StmtKind::For { .. } | StmtKind::While { .. }) {
                    n += 1;
                }
            });
        }
        n
    }
}

/// Visit every statement in a block, depth-first, in source order.
pub fn for_each_stmt(block: &Block, f: &mut impl FnMut(&Stmt)) {
    for stmt in &block.stmts {
        f(stmt);
        match &stmt.kind {
            StmtKind::If {
                then_block,
                else_block,
                ..
            } => {
                for_each_stmt(then_block, f);
                if let Some(e) = else_block {
                    for_each_stmt(e, f);
                }
            }
            StmtKind::While { body, .. } | StmtKind::For { body, .. } => for_each_stmt(body, f),
            _ => {}
        }
    }
}

/// Visit every expression under a statement, in source order.
pub fn for_each_expr_in_stmt(stmt: &Stmt, f: &mut impl FnMut(&Expr)) {
    fn walk(e: &Expr, f: &mut impl FnMut(&Expr)) {
        f(e);
        match &e.kind {
            ExprKind::Unary { operand, .. } => walk(operand, f),
            ExprKind::Binary { lhs, rhs, .. } => {
                walk(lhs, f);
                walk(rhs, f);
            }
            ExprKind::Call { args, .. }
            | ExprKind::Builtin { args, .. }
            | ExprKind::Extern { args, .. } => {
                for a in args {
                    walk(a, f);
                }
            }
            ExprKind::Index { index, .. } => walk(index, f),
            ExprKind::Number(_) | ExprKind::Var(_) => {}
        }
    }
    match &stmt.kind {
        StmtKind::Let { init, .. } => walk(init, f),
        StmtKind::LetArray { init, len, .. } => {
            walk(init, f);
            walk(len, f);
        }
        StmtKind::Assign { value, .. } => walk(value, f),
        StmtKind::AssignIndex { index, value, .. } => {
            walk(index, f);
            walk(value, f);
        }
        StmtKind::If { cond, .. } => walk(cond, f),
        StmtKind::While { cond, .. } => walk(cond, f),
        StmtKind::For { from, to, step, .. } => {
            walk(from, f);
            walk(to, f);
            if let Some(s) = step {
                walk(s, f);
            }
        }
        StmtKind::Return { value } => {
            if let Some(v) = value {
                walk(v, f);
            }
        }
        StmtKind::Source { .. } => {}
        StmtKind::Expr { expr } => walk(expr, f),
    }
}

/// Names assigned anywhere in a block (including nested blocks): the static
/// write set used for implicit control-flow propagation. `let` bindings are
/// included; whether a name resolves outside the block is the caller's
/// concern.
pub fn write_set(block: &Block) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for_each_stmt(block, &mut |s| match &s.kind {
        StmtKind::Let { name, .. }
        | StmtKind::LetArray { name, .. }
        | StmtKind::Assign { name, .. }
        | StmtKind::AssignIndex { name, .. } => {
            names.insert(name.clone());
        }
        StmtKind::For { var, .. } => {
            names.insert(var.clone());
        }
        _ => {}
    });
    names
}

/// Structural equality ignoring node ids and spans, used by the
/// parse/pretty-print round-trip checks.
pub fn ast_eq(a: &Program, b: &Program) -> bool {
    let mut a = a.clone();
    let mut b = b.clone();
    strip_positions(&mut a);
    strip_positions(&mut b);
    a == b
}

fn strip_positions(p: &mut Program) {
    for d in &mut p.params {
        d.span = Span::default();
    }
    for f in &mut p.functions {
        f.id = 0;
        f.span = Span::default();
        strip_block(&mut f.body);
    }
}

fn strip_block(b: &mut Block) {
    b.id = 0;
    for s in &mut b.stmts {
        s.id = 0;
        s.span = Span::default();
        match &mut s.kind {
            StmtKind::Let { init, .. } => strip_expr(init),
            StmtKind::LetArray { init, len, .. } => {
                strip_expr(init);
                strip_expr(len);
            }
            StmtKind::Assign { value, .. } => strip_expr(value),
            StmtKind::AssignIndex { index, value, .. } => {
                strip_expr(index);
                strip_expr(value);
            }
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                strip_expr(cond);
                strip_block(then_block);
                if let Some(e) = else_block {
                    strip_block(e);
                }
            }
            StmtKind::While { cond, body } => {
                strip_expr(cond);
                strip_block(body);
            }
            StmtKind::For {
                from,
                to,
                step,
                body,
                ..
            } => {
                strip_expr(from);
                strip_expr(to);
                if let Some(st) = step {
                    strip_expr(st);
                }
                strip_block(body);
            }
            StmtKind::Return { value } => {
                if let Some(v) = value {
                    strip_expr(v);
                }
            }
            StmtKind::Source { .. } => {}
            StmtKind::Expr { expr } => strip_expr(expr),
        }
    }
}

fn strip_expr(e: &mut Expr) {
    e.id = 0;
    e.span = Span::default();
    match &mut e.kind {
        ExprKind::Unary { operand, .. } => strip_expr(operand),
        ExprKind::Binary { lhs, rhs, .. } => {
            strip_expr(lhs);
            strip_expr(rhs);
        }
        ExprKind::Call { args, .. }
        | ExprKind::Builtin { args, .. }
        | ExprKind::Extern { args, .. } => {
            for a in args {
                strip_expr(a);
            }
        }
        ExprKind::Index { index, .. } => strip_expr(index),
        ExprKind::Number(_) | ExprKind::Var(_) => {}
    }
}
