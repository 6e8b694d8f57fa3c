//! A small expression language for run configuration.
//!
//! Grammar (no unary minus; negate by subtracting from zero):
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := base ('^' integer)?
//! base   := number | 'x' | 'y' | func '(' expr ')' | '(' expr ')'
//! func   := 'sin' | 'cos' | 'exp' | 'sqrt'
//! ```
//!
//! Numeric literals are kept as their source text and converted to working
//! precision only at evaluation time, so a single parsed configuration can
//! be evaluated under any precision without re-reading the input.
//! [`Expr`] implements [`std::fmt::Display`] with minimal parentheses, and
//! `parse(format!("{e}"))` reconstructs `e` exactly.

use crate::error::{Error, Result};
use crate::jet::{Axis, Jet, TJet};
use crate::numeric::{Point, PrecisionContext, Real};
use std::fmt;

/// Largest accepted power exponent.
const MAX_EXPONENT: u32 = 1000;

/// Parsed expression tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    /// A decimal literal, stored as written.
    Number(String),
    /// The first coordinate.
    X,
    /// The second coordinate.
    Y,
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    Sqrt(Box<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    offset: usize,
}

fn lex(input: &str) -> Result<Vec<Spanned>> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                out.push(Spanned { tok: Tok::Plus, offset: i });
                i += 1;
            }
            b'-' => {
                out.push(Spanned { tok: Tok::Minus, offset: i });
                i += 1;
            }
            b'*' => {
                out.push(Spanned { tok: Tok::Star, offset: i });
                i += 1;
            }
            b'/' => {
                out.push(Spanned { tok: Tok::Slash, offset: i });
                i += 1;
            }
            b'^' => {
                out.push(Spanned { tok: Tok::Caret, offset: i });
                i += 1;
            }
            b'(' => {
                out.push(Spanned { tok: Tok::LParen, offset: i });
                i += 1;
            }
            b')' => {
                out.push(Spanned { tok: Tok::RParen, offset: i });
                i += 1;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    if i >= bytes.len() || !bytes[i].is_ascii_digit() {
                        return Err(Error::Parse {
                            message: "expected digits after decimal point".into(),
                            offset: i,
                        });
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                // Exponent marker is consumed only if it really starts an
                // exponent, so "2*exp(x)" still lexes as 2, *, exp.
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
                out.push(Spanned {
                    tok: Tok::Num(input[start..i].to_string()),
                    offset: start,
                });
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Spanned {
                    tok: Tok::Ident(input[start..i].to_string()),
                    offset: start,
                });
            }
            _ => {
                return Err(Error::Parse {
                    message: format!("unexpected character {:?}", input[i..].chars().next().unwrap()),
                    offset: i,
                });
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [Spanned],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<&Spanned> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.peek().map(|t| t.offset).unwrap_or(self.end)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().map(|t| t.tok.clone()) {
                Some(Tok::Plus) => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek().map(|t| t.tok.clone()) {
                Some(Tok::Star) => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.base()?;
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Caret)) {
            self.bump();
            let at = self.here();
            match self.bump().map(|t| t.tok.clone()) {
                Some(Tok::Num(text)) => {
                    if !text.bytes().all(|b| b.is_ascii_digit()) {
                        return Err(Error::Parse {
                            message: format!("exponent must be a plain integer, got {text:?}"),
                            offset: at,
                        });
                    }
                    let n: u32 = text.parse().map_err(|_| Error::Parse {
                        message: format!("exponent {text:?} out of range"),
                        offset: at,
                    })?;
                    if n > MAX_EXPONENT {
                        return Err(Error::Parse {
                            message: format!("exponent {n} exceeds maximum {MAX_EXPONENT}"),
                            offset: at,
                        });
                    }
                    Ok(Expr::Pow(Box::new(base), n))
                }
                _ => Err(Error::Parse {
                    message: "expected integer exponent after '^'".into(),
                    offset: at,
                }),
            }
        } else {
            Ok(base)
        }
    }

    fn base(&mut self) -> Result<Expr> {
        let at = self.here();
        match self.bump().map(|t| t.tok.clone()) {
            Some(Tok::Num(text)) => Ok(Expr::Number(text)),
            Some(Tok::Ident(name)) => match name.as_str() {
                "x" => Ok(Expr::X),
                "y" => Ok(Expr::Y),
                "sin" | "cos" | "exp" | "sqrt" => {
                    match self.bump().map(|t| t.tok.clone()) {
                        Some(Tok::LParen) => {}
                        _ => {
                            return Err(Error::Parse {
                                message: format!("expected '(' after function {name}"),
                                offset: self.prev_end(),
                            })
                        }
                    }
                    let inner = self.expr()?;
                    match self.bump().map(|t| t.tok.clone()) {
                        Some(Tok::RParen) => {}
                        _ => {
                            return Err(Error::Parse {
                                message: format!("expected ')' closing {name}(...)"),
                                offset: self.prev_end(),
                            })
                        }
                    }
                    let inner = Box::new(inner);
                    Ok(match name.as_str() {
                        "sin" => Expr::Sin(inner),
                        "cos" => Expr::Cos(inner),
                        "exp" => Expr::Exp(inner),
                        _ => Expr::Sqrt(inner),
                    })
                }
                other => Err(Error::Parse {
                    message: format!(
                        "unknown name {other:?} (expected x, y, sin, cos, exp, or sqrt)"
                    ),
                    offset: at,
                }),
            },
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                match self.bump().map(|t| t.tok.clone()) {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(Error::Parse {
                        message: "expected ')'".into(),
                        offset: self.prev_end(),
                    }),
                }
            }
            Some(tok) => Err(Error::Parse {
                message: format!("unexpected token {tok:?}"),
                offset: at,
            }),
            None => Err(Error::Parse {
                message: "unexpected end of input".into(),
                offset: self.end,
            }),
        }
    }

    /// Offset just past the previously consumed token (used when a required
    /// follow-up token is missing).
    fn prev_end(&self) -> usize {
        self.here()
    }
}

/// Parses expression text; errors carry the byte offset of the problem.
pub fn parse(input: &str) -> Result<Expr> {
    let toks = lex(input)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        end: input.len(),
    };
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(Error::Parse {
            message: format!("unexpected trailing input {:?}", t.tok),
            offset: t.offset,
        });
    }
    Ok(e)
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Pow(..) => 3,
        _ => 4,
    }
}

fn fmt_prec(e: &Expr, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let p = precedence(e);
    if p < min {
        write!(f, "(")?;
    }
    match e {
        Expr::Number(text) => write!(f, "{text}")?,
        Expr::X => write!(f, "x")?,
        Expr::Y => write!(f, "y")?,
        Expr::Add(a, b) => {
            fmt_prec(a, 1, f)?;
            write!(f, " + ")?;
            fmt_prec(b, 2, f)?;
        }
        Expr::Sub(a, b) => {
            fmt_prec(a, 1, f)?;
            write!(f, " - ")?;
            fmt_prec(b, 2, f)?;
        }
        Expr::Mul(a, b) => {
            fmt_prec(a, 2, f)?;
            write!(f, "*")?;
            fmt_prec(b, 3, f)?;
        }
        Expr::Div(a, b) => {
            fmt_prec(a, 2, f)?;
            write!(f, "/")?;
            fmt_prec(b, 3, f)?;
        }
        Expr::Pow(b, n) => {
            fmt_prec(b, 4, f)?;
            write!(f, "^{n}")?;
        }
        Expr::Sin(a) => {
            write!(f, "sin(")?;
            fmt_prec(a, 0, f)?;
            write!(f, ")")?;
        }
        Expr::Cos(a) => {
            write!(f, "cos(")?;
            fmt_prec(a, 0, f)?;
            write!(f, ")")?;
        }
        Expr::Exp(a) => {
            write!(f, "exp(")?;
            fmt_prec(a, 0, f)?;
            write!(f, ")")?;
        }
        Expr::Sqrt(a) => {
            write!(f, "sqrt(")?;
            fmt_prec(a, 0, f)?;
            write!(f, ")")?;
        }
    }
    if p < min {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_prec(self, 0, f)
    }
}

fn eval_tjet(e: &Expr, p: &Point, order: u32, ctx: &PrecisionContext) -> Result<TJet> {
    Ok(match e {
        Expr::Number(text) => TJet::constant(ctx.real_from_str(text)?, order, ctx),
        Expr::X => TJet::coordinate(Axis::X, p.x.clone(), order, ctx),
        Expr::Y => TJet::coordinate(Axis::Y, p.y.clone(), order, ctx),
        Expr::Add(a, b) => eval_tjet(a, p, order, ctx)?.add(&eval_tjet(b, p, order, ctx)?),
        Expr::Sub(a, b) => eval_tjet(a, p, order, ctx)?.sub(&eval_tjet(b, p, order, ctx)?),
        Expr::Mul(a, b) => {
            eval_tjet(a, p, order, ctx)?.mul(&eval_tjet(b, p, order, ctx)?, ctx)
        }
        Expr::Div(a, b) => {
            let den = eval_tjet(b, p, order, ctx)?;
            let inv = den.recip(ctx).map_err(|_| Error::Singular {
                message: "division by a factor that vanishes here".into(),
                x: p.x.to_string(),
                y: p.y.to_string(),
            })?;
            eval_tjet(a, p, order, ctx)?.mul(&inv, ctx)
        }
        Expr::Pow(b, n) => eval_tjet(b, p, order, ctx)?.powi(*n, ctx),
        Expr::Sin(a) => eval_tjet(a, p, order, ctx)?.sin(ctx),
        Expr::Cos(a) => eval_tjet(a, p, order, ctx)?.cos(ctx),
        Expr::Exp(a) => eval_tjet(a, p, order, ctx)?.exp(ctx),
        Expr::Sqrt(a) => {
            let inner = eval_tjet(a, p, order, ctx)?;
            inner.sqrt(ctx).map_err(|_| Error::Singular {
                message: "square root of a non-positive value".into(),
                x: p.x.to_string(),
                y: p.y.to_string(),
            })?
        }
    })
}

/// Evaluates the expression and its derivatives at a point.
///
/// `order` ranges over `0..=3`: 0 gives just the value, 1 adds the
/// gradient, 2 the Hessian, 3 the third derivatives.
pub fn eval_jet(e: &Expr, p: &Point, order: u32, ctx: &PrecisionContext) -> Result<Jet> {
    if order > crate::jet::MAX_PUBLIC_ORDER {
        return Err(Error::JetOrder {
            requested: order,
            max: crate::jet::MAX_PUBLIC_ORDER,
        });
    }
    eval_tjet(e, p, order, ctx)?.to_jet(order, ctx)
}

/// Evaluates just the value of the expression at a point.
pub fn eval_value(e: &Expr, p: &Point, ctx: &PrecisionContext) -> Result<Real> {
    Ok(eval_jet(e, p, 0, ctx)?.value)
}
