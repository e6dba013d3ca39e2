//! Concrete text grammar for STL formulas.
//!
//! ```text
//! or_expr    := and_expr ("or" and_expr)*
//! and_expr   := until_expr ("and" until_expr)*
//! until_expr := unary ("U" interval until_expr)?
//! unary      := "not" unary | "F" interval unary | "G" interval unary | atom
//! atom       := "true" | "false" | IDENT | "(" or_expr ")"
//! interval   := "[" NUMBER "," NUMBER "]"
//! ```
//!
//! Real-valued interval bounds are rounded inward (`ceil(a)`, `floor(b)`) and a
//! warning is recorded.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

use super::ast::{Formula, Interval};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown region `{name}` at byte {pos}")]
    UnknownRegion { name: String, pos: usize },
    #[error("interval at byte {pos} has upper bound {hi} below lower bound {lo}")]
    BadInterval { pos: usize, lo: f64, hi: f64 },
}

/// Anything that can answer "is this a known region name".
pub trait RegionTable {
    fn has_region(&self, name: &str) -> bool;
}

impl RegionTable for HashSet<String> {
    fn has_region(&self, name: &str) -> bool {
        self.contains(name)
    }
}

impl RegionTable for BTreeSet<String> {
    fn has_region(&self, name: &str) -> bool {
        self.contains(name)
    }
}

impl<V> RegionTable for BTreeMap<String, V> {
    fn has_region(&self, name: &str) -> bool {
        self.contains_key(name)
    }
}

impl<V> RegionTable for HashMap<String, V> {
    fn has_region(&self, name: &str) -> bool {
        self.contains_key(name)
    }
}

impl RegionTable for [&str] {
    fn has_region(&self, name: &str) -> bool {
        self.contains(&name)
    }
}

/// Accepts every region name.
pub struct AnyRegion;

impl RegionTable for AnyRegion {
    fn has_region(&self, _: &str) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub formula: Formula,
    pub warnings: Vec<String>,
}

pub fn parse<R: RegionTable + ?Sized>(text: &str, regions: &R) -> Result<Parsed, ParseError> {
    let tokens = lex(text)?;
    let mut p = Parser { tokens, idx: 0, end: text.len(), regions, warnings: Vec::new() };
    let formula = p.or_expr()?;
    if let Some(tok) = p.peek() {
        return Err(ParseError::Syntax { pos: tok.pos, msg: format!("unexpected `{}`", tok.kind) });
    }
    Ok(Parsed { formula, warnings: p.warnings })
}

/// Parses without checking region names.
pub fn parse_unchecked(text: &str) -> Result<Formula, ParseError> {
    parse(text, &AnyRegion).map(|p| p.formula)
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Ident(String),
    Number(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
}

impl std::fmt::Display for TokKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TokKind::Ident(s) => f.write_str(s),
            TokKind::Number(n) => write!(f, "{n}"),
            TokKind::LParen => f.write_str("("),
            TokKind::RParen => f.write_str(")"),
            TokKind::LBracket => f.write_str("["),
            TokKind::RBracket => f.write_str("]"),
            TokKind::Comma => f.write_str(","),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => TokKind::LParen,
            b')' => TokKind::RParen,
            b'[' => TokKind::LBracket,
            b']' => TokKind::RBracket,
            b',' => TokKind::Comma,
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token { kind: TokKind::Ident(text[start..i].to_string()), pos: start });
                continue;
            }
            c if c.is_ascii_digit() || c == b'.' || c == b'-' => {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                let s = &text[start..i];
                let n: f64 = s.parse().map_err(|_| ParseError::Syntax {
                    pos: start,
                    msg: format!("malformed number `{s}`"),
                })?;
                out.push(Token { kind: TokKind::Number(n), pos: start });
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax { pos: start, msg: format!("unexpected character `{ch}`") });
            }
        };
        out.push(Token { kind, pos: start });
        i += 1;
    }
    Ok(out)
}

struct Parser<'a, R: ?Sized> {
    tokens: Vec<Token>,
    idx: usize,
    end: usize,
    regions: &'a R,
    warnings: Vec<String>,
}

impl<R: RegionTable + ?Sized> Parser<'_, R> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx)
    }

    fn peek_at(&self, offset: usize) -> Option<&Token> {
        self.tokens.get(self.idx + offset)
    }

    fn pos(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.idx).cloned();
        self.idx += 1;
        t
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { kind: TokKind::Ident(s), .. }) if s == kw)
    }

    /// `F`, `G` or `U` immediately followed by `[`.
    fn is_temporal(&self, op: &str) -> bool {
        self.is_keyword(op) && matches!(self.peek_at(1), Some(Token { kind: TokKind::LBracket, .. }))
    }

    fn expect(&mut self, kind: TokKind) -> Result<(), ParseError> {
        let pos = self.pos();
        match self.bump() {
            Some(t) if t.kind == kind => Ok(()),
            Some(t) => Err(ParseError::Syntax { pos, msg: format!("expected `{kind}`, found `{}`", t.kind) }),
            None => Err(ParseError::Syntax { pos, msg: format!("expected `{kind}`, found end of input") }),
        }
    }

    fn or_expr(&mut self) -> Result<Formula, ParseError> {
        let mut items = vec![self.and_expr()?];
        while self.is_keyword("or") {
            self.bump();
            items.push(self.and_expr()?);
        }
        Ok(Formula::or(items))
    }

    fn and_expr(&mut self) -> Result<Formula, ParseError> {
        let mut items = vec![self.until_expr()?];
        while self.is_keyword("and") {
            self.bump();
            items.push(self.until_expr()?);
        }
        Ok(Formula::and(items))
    }

    fn until_expr(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.unary()?;
        if self.is_temporal("U") {
            self.bump();
            let interval = self.interval()?;
            let rhs = self.until_expr()?;
            return Ok(Formula::until(lhs, interval, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.is_keyword("not") {
            self.bump();
            let inner = self.unary()?;
            return Ok(match inner {
                Formula::Pred { region, negated } => Formula::Pred { region, negated: !negated },
                other => Formula::not(other),
            });
        }
        if self.is_temporal("F") {
            self.bump();
            let interval = self.interval()?;
            return Ok(Formula::eventually(interval, self.unary()?));
        }
        if self.is_temporal("G") {
            self.bump();
            let interval = self.interval()?;
            return Ok(Formula::always(interval, self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Formula, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Some(Token { kind: TokKind::LParen, .. }) => {
                let f = self.or_expr()?;
                self.expect(TokKind::RParen)?;
                Ok(f)
            }
            Some(Token { kind: TokKind::Ident(name), .. }) => match name.as_str() {
                "true" => Ok(Formula::True),
                "false" => Ok(Formula::False),
                "and" | "or" | "not" => {
                    Err(ParseError::Syntax { pos, msg: format!("unexpected keyword `{name}`") })
                }
                _ if self.regions.has_region(&name) => Ok(Formula::pred(name)),
                _ => Err(ParseError::UnknownRegion { name, pos }),
            },
            Some(t) => Err(ParseError::Syntax { pos, msg: format!("unexpected `{}`", t.kind) }),
            None => Err(ParseError::Syntax { pos, msg: "unexpected end of input".into() }),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Some(Token { kind: TokKind::Number(n), .. }) if n >= 0.0 && n.is_finite() => Ok(n),
            Some(Token { kind: TokKind::Number(n), .. }) => {
                Err(ParseError::Syntax { pos, msg: format!("interval bound {n} must be non-negative") })
            }
            Some(t) => Err(ParseError::Syntax { pos, msg: format!("expected number, found `{}`", t.kind) }),
            None => Err(ParseError::Syntax { pos, msg: "expected number, found end of input".into() }),
        }
    }

    fn interval(&mut self) -> Result<Interval, ParseError> {
        let pos = self.pos();
        self.expect(TokKind::LBracket)?;
        let a = self.number()?;
        self.expect(TokKind::Comma)?;
        let b = self.number()?;
        self.expect(TokKind::RBracket)?;
        if b < a {
            return Err(ParseError::BadInterval { pos, lo: a, hi: b });
        }
        let lo = a.ceil();
        let hi = b.floor();
        if lo != a || hi != b {
            self.warnings.push(format!(
                "interval [{a},{b}] at byte {pos} rounded to integer steps [{lo},{hi}]"
            ));
        }
        if hi < lo {
            return Err(ParseError::BadInterval { pos, lo, hi });
        }
        Ok(Interval::new(lo as usize, hi as usize))
    }
}
