//! Recursive-descent parser for PTL.
//!
//! Grammar sketch (see the README for the full reference):
//!
//! ```text
//! program   := (param_decl | fn_decl)*
//! param_decl:= ["implicit"] "param" IDENT ";"
//! fn_decl   := "fn" IDENT "(" [IDENT ("," IDENT)*] ")" block
//! stmt      := "let" IDENT "=" ("[" expr ";" expr "]" | expr) ";"
//!            | IDENT "=" expr ";" | IDENT "[" expr "]" "=" expr ";"
//!            | "if" expr block ["else" (block | if_stmt)]
//!            | "while" expr block
//!            | "for" IDENT "in" expr ".." expr ["step" expr] block
//!            | "return" [expr] ";" | "source" "(" IDENT "," STRING ")" ";"
//!            | expr ";"
//! ```
//!
//! Every block, statement, and expression receives a [`NodeId`] in the order
//! the parser encounters it, which makes ids deterministic for a given source.

use std::fmt;

use crate::ast::*;
use crate::lexer::{lex, Tok, Token};

/// Syntax error with source position.
#[derive(Debug, Clone, thiserror::Error)]
pub struct ParseError {
    pub message: String,
    pub span: Span,
}

impl ParseError {
    pub fn new(message: impl Into<String>, span: Span) -> Self {
        ParseError {
            message: message.into(),
            span,
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.span, self.message)
    }
}

/// Parse PTL source into a [`Program`].
pub fn parse(src: &str) -> Result<Program, ParseError> {
    let tokens = lex(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        next_id: 1,
    };
    p.program()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    next_id: NodeId,
}

impl Parser {
    fn fresh_id(&mut self) -> NodeId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        let i = (self.pos + 1).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(ParseError::new(
                format!("expected {}, found {}", tok, self.peek()),
                self.span(),
            ))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, Span), ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok((name, span))
            }
            other => Err(ParseError::new(
                format!("expected {what}, found {other}"),
                span,
            )),
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut params = Vec::new();
        let mut functions = Vec::new();
        loop {
            match self.peek() {
                Tok::Eof => break,
                Tok::Param => {
                    let span = self.span();
                    self.bump();
                    let (name, _) = self.expect_ident("parameter name")?;
                    self.expect(Tok::Semi)?;
                    params.push(ParamDecl {
                        name,
                        implicit: false,
                        span,
                    });
                }
                Tok::Implicit => {
                    let span = self.span();
                    self.bump();
                    self.expect(Tok::Param)?;
                    let (name, _) = self.expect_ident("parameter name")?;
                    self.expect(Tok::Semi)?;
                    params.push(ParamDecl {
                        name,
                        implicit: true,
                        span,
                    });
                }
                Tok::Fn => functions.push(self.function()?),
                other => {
                    return Err(ParseError::new(
                        format!("expected `param`, `fn`, or end of input, found {other}"),
                        self.span(),
                    ));
                }
            }
        }
        Ok(Program {
            params,
            functions,
            entry: "main".to_string(),
        })
    }

    fn function(&mut self) -> Result<Function, ParseError> {
        let span = self.span();
        self.expect(Tok::Fn)?;
        let id = self.fresh_id();
        let (name, _) = self.expect_ident("function name")?;
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let (p, _) = self.expect_ident("parameter name")?;
                params.push(p);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        let body = self.block()?;
        Ok(Function {
            id,
            name,
            params,
            body,
            span,
        })
    }

    fn block(&mut self) -> Result<Block, ParseError> {
        self.expect(Tok::LBrace)?;
        let id = self.fresh_id();
        let mut stmts = Vec::new();
        while *self.peek() != Tok::RBrace {
            if *self.peek() == Tok::Eof {
                return Err(ParseError::new("unexpected end of input in block", self.span()));
            }
            stmts.push(self.stmt()?);
        }
        self.expect(Tok::RBrace)?;
        Ok(Block { id, stmts })
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Let => {
                let id = self.fresh_id();
                self.bump();
                let (name, _) = self.expect_ident("variable name")?;
                self.expect(Tok::Assign)?;
                if *self.peek() == Tok::LBracket {
                    self.bump();
                    let init = self.expr()?;
                    self.expect(Tok::Semi)?;
                    let len = self.expr()?;
                    self.expect(Tok::RBracket)?;
                    self.expect(Tok::Semi)?;
                    Ok(Stmt {
                        id,
                        span,
                        kind: StmtKind::LetArray { name, init, len },
                    })
                } else {
                    let init = self.expr()?;
                    self.expect(Tok::Semi)?;
                    Ok(Stmt {
                        id,
                        span,
                        kind: StmtKind::Let { name, init },
                    })
                }
            }
            Tok::If => self.if_stmt(),
            Tok::While => {
                let id = self.fresh_id();
                self.bump();
                let cond = self.expr()?;
                let body = self.block()?;
                Ok(Stmt {
                    id,
                    span,
                    kind: StmtKind::While { cond, body },
                })
            }
            Tok::For => {
                let id = self.fresh_id();
                self.bump();
                let (var, _) = self.expect_ident("loop variable")?;
                self.expect(Tok::In)?;
                let from = self.expr()?;
                self.expect(Tok::DotDot)?;
                let to = self.expr()?;
                let step = if *self.peek() == Tok::Step {
                    self.bump();
                    Some(self.expr()?)
                } else {
                    None
                };
                let body = self.block()?;
                Ok(Stmt {
                    id,
                    span,
                    kind: StmtKind::For {
                        var,
                        from,
                        to,
                        step,
                        body,
                    },
                })
            }
            Tok::Return => {
                let id = self.fresh_id();
                self.bump();
                let value = if *self.peek() == Tok::Semi {
                    None
                } else {
                    Some(self.expr()?)
                };
                self.expect(Tok::Semi)?;
                Ok(Stmt {
                    id,
                    span,
                    kind: StmtKind::Return { value },
                })
            }
            Tok::Source => {
                let id = self.fresh_id();
                self.bump();
                self.expect(Tok::LParen)?;
                let (var, _) = self.expect_ident("variable name")?;
                self.expect(Tok::Comma)?;
                let label = match self.peek().clone() {
                    Tok::Str(s) => {
                        self.bump();
                        s
                    }
                    other => {
                        return Err(ParseError::new(
                            format!("expected label string, found {other}"),
                            self.span(),
                        ));
                    }
                };
                self.expect(Tok::RParen)?;
                self.expect(Tok::Semi)?;
                Ok(Stmt {
                    id,
                    span,
                    kind: StmtKind::Source { var, label },
                })
            }
            Tok::Ident(name) => {
                // Lookahead decides between assignment forms and a bare
                // expression statement (e.g. a call).
                match self.peek2() {
                    Tok::Assign => {
                        let id = self.fresh_id();
                        self.bump();
                        self.bump();
                        let value = self.expr()?;
                        self.expect(Tok::Semi)?;
                        Ok(Stmt {
                            id,
                            span,
                            kind: StmtKind::Assign { name, value },
                        })
                    }
                    Tok::LBracket if self.is_index_assign() => {
                        let id = self.fresh_id();
                        self.bump();
                        self.bump();
                        let index = self.expr()?;
                        self.expect(Tok::RBracket)?;
                        self.expect(Tok::Assign)?;
                        let value = self.expr()?;
                        self.expect(Tok::Semi)?;
                        Ok(Stmt {
                            id,
                            span,
                            kind: StmtKind::AssignIndex { name, index, value },
                        })
                    }
                    _ => self.expr_stmt(span),
                }
            }
            _ => self.expr_stmt(span),
        }
    }

    /// Distinguish `a[i] = v;` from the expression `a[i];` by scanning for a
    /// `=` right after the matching `]`.
    fn is_index_assign(&self) -> bool {
        let mut depth = 0usize;
        let mut i = self.pos + 1; // at `[`
        while i < self.tokens.len() {
            match self.tokens[i].tok {
                Tok::LBracket => depth += 1,
                Tok::RBracket => {
                    depth -= 1;
                    if depth == 0 {
                        return matches!(
                            self.tokens.get(i + 1).map(|t| &t.tok),
                            Some(Tok::Assign)
                        );
                    }
                }
                Tok::Eof => return false,
                _ => {}
            }
            i += 1;
        }
        false
    }

    fn expr_stmt(&mut self, span: Span) -> Result<Stmt, ParseError> {
        let id = self.fresh_id();
        let expr = self.expr()?;
        self.expect(Tok::Semi)?;
        Ok(Stmt {
            id,
            span,
            kind: StmtKind::Expr { expr },
        })
    }

    fn if_stmt(&mut self) -> Result<Stmt, ParseError> {
        let span = self.span();
        let id = self.fresh_id();
        self.expect(Tok::If)?;
        let cond = self.expr()?;
        let then_block = self.block()?;
        let else_block = if *self.peek() == Tok::Else {
            self.bump();
            if *self.peek() == Tok::If {
                // Desugar `else if` into an else block holding one `if`.
                let block_id = self.fresh_id();
                let nested = self.if_stmt()?;
                Some(Block {
                    id: block_id,
                    stmts: vec![nested],
                })
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(Stmt {
            id,
            span,
            kind: StmtKind::If {
                cond,
                then_block,
                else_block,
            },
        })
    }

    // --- expressions, lowest precedence first ---

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::OrOr {
            let span = self.span();
            let id = self.fresh_id();
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr {
                id,
                span,
                kind: ExprKind::Binary {
                    op: BinOp::Or,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
            };
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.cmp_expr()?;
        while *self.peek() == Tok::AndAnd {
            let span = self.span();
            let id = self.fresh_id();
            self.bump();
            let rhs = self.cmp_expr()?;
            lhs = Expr {
                id,
                span,
                kind: ExprKind::Binary {
                    op: BinOp::And,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
            };
        }
        Ok(lhs)
    }

    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            Tok::EqEq => Some(BinOp::Eq),
            Tok::NotEq => Some(BinOp::Ne),
            Tok::Lt => Some(BinOp::Lt),
            Tok::Le => Some(BinOp::Le),
            Tok::Gt => Some(BinOp::Gt),
            Tok::Ge => Some(BinOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            let span = self.span();
            let id = self.fresh_id();
            self.bump();
            let rhs = self.add_expr()?;
            Ok(Expr {
                id,
                span,
                kind: ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
            })
        } else {
            Ok(lhs)
        }
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            let span = self.span();
            let id = self.fresh_id();
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr {
                id,
                span,
                kind: ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
            };
        }
        Ok(lhs)
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::Percent => BinOp::Mod,
                _ => break,
            };
            let span = self.span();
            let id = self.fresh_id();
            self.bump();
            let rhs = self.unary_expr()?;
            lhs = Expr {
                id,
                span,
                kind: ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
            };
        }
        Ok(lhs)
    }

    fn unary_expr(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Minus => {
                let span = self.span();
                let id = self.fresh_id();
                self.bump();
                let operand = self.unary_expr()?;
                Ok(Expr {
                    id,
                    span,
                    kind: ExprKind::Unary {
                        op: UnOp::Neg,
                        operand: Box::new(operand),
                    },
                })
            }
            Tok::Bang => {
                let span = self.span();
                let id = self.fresh_id();
                self.bump();
                let operand = self.unary_expr()?;
                Ok(Expr {
                    id,
                    span,
                    kind: ExprKind::Unary {
                        op: UnOp::Not,
                        operand: Box::new(operand),
                    },
                })
            }
            _ => self.primary_expr(),
        }
    }

    fn primary_expr(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Number(n) => {
                let id = self.fresh_id();
                self.bump();
                Ok(Expr {
                    id,
                    span,
                    kind: ExprKind::Number(n),
                })
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Extern => {
                let id = self.fresh_id();
                self.bump();
                self.expect(Tok::LParen)?;
                let name = match self.peek().clone() {
                    Tok::Str(s) => {
                        self.bump();
                        s
                    }
                    other => {
                        return Err(ParseError::new(
                            format!("expected extern name string, found {other}"),
                            self.span(),
                        ));
                    }
                };
                let mut args = Vec::new();
                while *self.peek() == Tok::Comma {
                    self.bump();
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen)?;
                Ok(Expr {
                    id,
                    span,
                    kind: ExprKind::Extern { name, args },
                })
            }
            Tok::Ident(name) => {
                let id = self.fresh_id();
                self.bump();
                match self.peek() {
                    Tok::LParen => {
                        self.bump();
                        let mut args = Vec::new();
                        if *self.peek() != Tok::RParen {
                            loop {
                                args.push(self.expr()?);
                                if *self.peek() == Tok::Comma {
                                    self.bump();
                                } else {
                                    break;
                                }
                            }
                        }
                        self.expect(Tok::RParen)?;
                        if let Some(builtin) = Builtin::from_name(&name) {
                            if args.len() != builtin.arity() {
                                return Err(ParseError::new(
                                    format!(
                                        "builtin `{}` takes {} argument(s), got {}",
                                        builtin.name(),
                                        builtin.arity(),
                                        args.len()
                                    ),
                                    span,
                                ));
                            }
                            Ok(Expr {
                                id,
                                span,
                                kind: ExprKind::Builtin { builtin, args },
                            })
                        } else {
                            Ok(Expr {
                                id,
                                span,
                                kind: ExprKind::Call { name, args },
                            })
                        }
                    }
                    Tok::LBracket => {
                        self.bump();
                        let index = self.expr()?;
                        self.expect(Tok::RBracket)?;
                        Ok(Expr {
                            id,
                            span,
                            kind: ExprKind::Index {
                                name,
                                index: Box::new(index),
                            },
                        })
                    }
                    _ => Ok(Expr {
                        id,
                        span,
                        kind: ExprKind::Var(name),
                    }),
                }
            }
            other => Err(ParseError::new(
                format!("expected expression, found {other}"),
                span,
            )),
        }
    }
}
