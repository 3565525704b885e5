//! Canonical pretty-printer for PTL programs.
//!
//! `parse(print(parse(s)))` is structurally identical to `parse(s)` (modulo
//! node ids and spans) — the round-trip property the parser tests pin down.

use std::fmt::Write;

use crate::ast::*;

/// Render a program in canonical formatting (4-space indent, one statement
/// per line, minimal parentheses).
pub fn print_program(program: &Program) -> String {
    let mut out = String::new();
    for p in &program.params {
        if p.implicit {
            let _ = writeln!(out, "implicit param {};", p.name);
        } else {
            let _ = writeln!(out, "param {};", p.name);
        }
    }
    if !program.params.is_empty() {
        out.push('\n');
    }
    for (i, f) in program.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "fn {}({}) {{", f.name, f.params.join(", "));
        print_block_body(&mut out, &f.body, 1);
        out.push_str("}\n");
    }
    out
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn print_block_body(out: &mut String, block: &Block, level: usize) {
    for stmt in &block.stmts {
        print_stmt(out, stmt, level);
    }
}

fn print_stmt(out: &mut String, stmt: &Stmt, level: usize) {
    indent(out, level);
    match &stmt.kind {
        StmtKind::Let { name, init } => {
            let _ = writeln!(out, "let {name} = {};", expr_str(init));
        }
        StmtKind::LetArray { name, init, len } => {
            let _ = writeln!(out, "let {name} = [{}; {}];", expr_str(init), expr_str(len));
        }
        StmtKind::Assign { name, value } => {
            let _ = writeln!(out, "{name} = {};", expr_str(value));
        }
        StmtKind::AssignIndex { name, index, value } => {
            let _ = writeln!(out, "{name}[{}] = {};", expr_str(index), expr_str(value));
        }
        StmtKind::If {
            cond,
            then_block,
            else_block,
        } => {
            let _ = writeln!(out, "if {} {{", expr_str(cond));
            print_block_body(out, then_block, level + 1);
            indent(out, level);
            match else_block {
                None => out.push_str("}\n"),
                Some(e) => {
                    out.push_str("} else {\n");
                    print_block_body(out, e, level + 1);
                    indent(out, level);
                    out.push_str("}\n");
                }
            }
        }
        StmtKind::While { cond, body } => {
            let _ = writeln!(out, "while {} {{", expr_str(cond));
            print_block_body(out, body, level + 1);
            indent(out, level);
            out.push_str("}\n");
        }
        StmtKind::For {
            var,
            from,
            to,
            step,
            body,
        } => {
            match step {
                None => {
                    let _ = writeln!(
                        out,
                        "for {var} in {}..{} {{",
                        range_operand_str(from),
                        range_operand_str(to)
                    );
                }
                Some(s) => {
                    let _ = writeln!(
                        out,
                        "for {var} in {}..{} step {} {{",
                        range_operand_str(from),
                        range_operand_str(to),
                        expr_str(s)
                    );
                }
            }
            print_block_body(out, body, level + 1);
            indent(out, level);
            out.push_str("}\n");
        }
        StmtKind::Return { value } => match value {
            None => out.push_str("return;\n"),
            Some(v) => {
                let _ = writeln!(out, "return {};", expr_str(v));
            }
        },
        StmtKind::Source { var, label } => {
            let _ = writeln!(out, "source({var}, \"{label}\");");
        }
        StmtKind::Expr { expr } => {
            let _ = writeln!(out, "{};", expr_str(expr));
        }
    }
}

/// Operator precedence used to decide where parentheses are required.
fn precedence(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Binary { op, .. } => match op {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 5,
        },
        ExprKind::Unary { .. } => 6,
        _ => 7,
    }
}

pub fn expr_str(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

/// A range bound `a..b` binds tighter than `..` visually; wrap any operator
/// expression so `0..n - 1` reads unambiguously as `0..(n - 1)`.
fn range_operand_str(e: &Expr) -> String {
    if precedence(e) < 7 {
        format!("({})", expr_str(e))
    } else {
        expr_str(e)
    }
}

fn write_expr(out: &mut String, e: &Expr) {
    match &e.kind {
        ExprKind::Number(n) => {
            let _ = write!(out, "{n}");
        }
        ExprKind::Var(name) => out.push_str(name),
        ExprKind::Unary { op, operand } => {
            out.push(match op {
                UnOp::Neg => '-',
                UnOp::Not => '!',
            });
            if precedence(operand) < 6 {
                out.push('(');
                write_expr(out, operand);
                out.push(')');
            } else {
                write_expr(out, operand);
            }
        }
        ExprKind::Binary { op, lhs, rhs } => {
            let prec = precedence(e);
            if precedence(lhs) < prec {
                out.push('(');
                write_expr(out, lhs);
                out.push(')');
            } else {
                write_expr(out, lhs);
            }
            let _ = write!(out, " {} ", op.symbol());
            // Right operand needs parens at equal precedence too: `a - (b - c)`.
            if precedence(rhs) <= prec {
                out.push('(');
                write_expr(out, rhs);
                out.push(')');
            } else {
                write_expr(out, rhs);
            }
        }
        ExprKind::Call { name, args } => {
            out.push_str(name);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a);
            }
            out.push(')');
        }
        ExprKind::Builtin { builtin, args } => {
            out.push_str(builtin.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a);
            }
            out.push(')');
        }
        ExprKind::Extern { name, args } => {
            let _ = write!(out, "extern(\"{name}\"");
            for a in args {
                out.push_str(", ");
                write_expr(out, a);
            }
            out.push(')');
        }
        ExprKind::Index { name, index } => {
            out.push_str(name);
            out.push('[');
            write_expr(out, index);
            out.push(']');
        }
    }
}
