//! Hand-rolled lexer for PTL source.

use std::fmt;

use crate::ast::Span;
use crate::parser::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    // keywords
    Param,
    Implicit,
    Fn,
    Let,
    If,
    Else,
    While,
    For,
    In,
    Step,
    Return,
    Source,
    Extern,
    // punctuation
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Semi,
    Comma,
    DotDot,
    // operators
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    AndAnd,
    OrOr,
    Bang,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Number(n) => write!(f, "number `{n}`"),
            Tok::Str(s) => write!(f, "string \"{s}\""),
            Tok::Param => write!(f, "`param`"),
            Tok::Implicit => write!(f, "`implicit`"),
            Tok::Fn => write!(f, "`fn`"),
            Tok::Let => write!(f, "`let`"),
            Tok::If => write!(f, "`if`"),
            Tok::Else => write!(f, "`else`"),
            Tok::While => write!(f, "`while`"),
            Tok::For => write!(f, "`for`"),
            Tok::In => write!(f, "`in`"),
            Tok::Step => write!(f, "`step`"),
            Tok::Return => write!(f, "`return`"),
            Tok::Source => write!(f, "`source`"),
            Tok::Extern => write!(f, "`extern`"),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBracket => write!(f, "`[`"),
            Tok::RBracket => write!(f, "`]`"),
            Tok::Semi => write!(f, "`;`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::DotDot => write!(f, "`..`"),
            Tok::Assign => write!(f, "`=`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Percent => write!(f, "`%`"),
            Tok::EqEq => write!(f, "`==`"),
            Tok::NotEq => write!(f, "`!=`"),
            Tok::Lt => write!(f, "`<`"),
            Tok::Le => write!(f, "`<=`"),
            Tok::Gt => write!(f, "`>`"),
            Tok::Ge => write!(f, "`>=`"),
            Tok::AndAnd => write!(f, "`&&`"),
            Tok::OrOr => write!(f, "`||`"),
            Tok::Bang => write!(f, "`!`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    macro_rules! push {
        ($tok:expr, $span:expr) => {
            tokens.push(Token {
                tok: $tok,
                span: $span,
            })
        };
    }

    while i < bytes.len() {
        let c = bytes[i] as char;
        let span = Span { line, col };
        match c {
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
            }
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            '/' if i + 1 < bytes.len() && bytes[i + 1] == b'/' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            '{' => {
                push!(Tok::LBrace, span);
                i += 1;
                col += 1;
            }
            '}' => {
                push!(Tok::RBrace, span);
                i += 1;
                col += 1;
            }
            '(' => {
                push!(Tok::LParen, span);
                i += 1;
                col += 1;
            }
            ')' => {
                push!(Tok::RParen, span);
                i += 1;
                col += 1;
            }
            '[' => {
                push!(Tok::LBracket, span);
                i += 1;
                col += 1;
            }
            ']' => {
                push!(Tok::RBracket, span);
                i += 1;
                col += 1;
            }
            ';' => {
                push!(Tok::Semi, span);
                i += 1;
                col += 1;
            }
            ',' => {
                push!(Tok::Comma, span);
                i += 1;
                col += 1;
            }
            '+' => {
                push!(Tok::Plus, span);
                i += 1;
                col += 1;
            }
            '-' => {
                push!(Tok::Minus, span);
                i += 1;
                col += 1;
            }
            '*' => {
                push!(Tok::Star, span);
                i += 1;
                col += 1;
            }
            '/' => {
                push!(Tok::Slash, span);
                i += 1;
                col += 1;
            }
            '%' => {
                push!(Tok::Percent, span);
                i += 1;
                col += 1;
            }
            '.' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'.' {
                    push!(Tok::DotDot, span);
                    i += 2;
                    col += 2;
                } else {
                    return Err(ParseError::new("unexpected `.`", span));
                }
            }
            '=' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    push!(Tok::EqEq, span);
                    i += 2;
                    col += 2;
                } else {
                    push!(Tok::Assign, span);
                    i += 1;
                    col += 1;
                }
            }
            '!' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    push!(Tok::NotEq, span);
                    i += 2;
                    col += 2;
                } else {
                    push!(Tok::Bang, span);
                    i += 1;
                    col += 1;
                }
            }
            '<' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    push!(Tok::Le, span);
                    i += 2;
                    col += 2;
                } else {
                    push!(Tok::Lt, span);
                    i += 1;
                    col += 1;
                }
            }
            '>' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    push!(Tok::Ge, span);
                    i += 2;
                    col += 2;
                } else {
                    push!(Tok::Gt, span);
                    i += 1;
                    col += 1;
                }
            }
            '&' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'&' {
                    push!(Tok::AndAnd, span);
                    i += 2;
                    col += 2;
                } else {
                    return Err(ParseError::new("unexpected `&` (did you mean `&&`?)", span));
                }
            }
            '|' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'|' {
                    push!(Tok::OrOr, span);
                    i += 2;
                    col += 2;
                } else {
                    return Err(ParseError::new("unexpected `|` (did you mean `||`?)", span));
                }
            }
            '"' => {
                let start = i + 1;
                let mut j = start;
                while j < bytes.len() && bytes[j] != b'"' && bytes[j] != b'\n' {
                    j += 1;
                }
                if j >= bytes.len() || bytes[j] == b'\n' {
                    return Err(ParseError::new("unterminated string literal", span));
                }
                let text = src[start..j].to_string();
                let width = (j + 1 - i) as u32;
                push!(Tok::Str(text), span);
                i = j + 1;
                col += width;
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                // Fractional part, but stop before `..` so ranges lex cleanly.
                if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value: f64 = text
                    .parse()
                    .map_err(|_| ParseError::new(format!("invalid number `{text}`"), span))?;
                push!(Tok::Number(value), span);
                col += (i - start) as u32;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                let word = &src[start..i];
                let tok = match word {
                    "param" => Tok::Param,
                    "implicit" => Tok::Implicit,
                    "fn" => Tok::Fn,
                    "let" => Tok::Let,
                    "if" => Tok::If,
                    "else" => Tok::Else,
                    "while" => Tok::While,
                    "for" => Tok::For,
                    "in" => Tok::In,
                    "step" => Tok::Step,
                    "return" => Tok::Return,
                    "source" => Tok::Source,
                    "extern" => Tok::Extern,
                    _ => Tok::Ident(word.to_string()),
                };
                push!(tok, span);
                col += (i - start) as u32;
            }
            other => {
                return Err(ParseError::new(
                    format!("unexpected character `{other}`"),
                    span,
                ));
            }
        }
    }
    tokens.push(Token {
        tok: Tok::Eof,
        span: Span { line, col },
    });
    Ok(tokens)
}
