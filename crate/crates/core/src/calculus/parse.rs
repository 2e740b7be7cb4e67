//! Recursive-descent parser for coefficient expressions.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := number | var | fn '(' expr ')' | '-' factor | '(' expr ')'
//! ```
//!
//! `fn` is one of `sin cos sinh cosh exp sqrt`. A minus sign directly in
//! front of a numeric literal is folded into the literal.

use super::expr::{Expr, Func, Node, Var};
use crate::error::ParseError;

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { src, pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < src.len() {
        return Err(p.error("operator or end of input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn error(&self, expected: &str) -> ParseError {
        let found = match self.rest().chars().next() {
            None => "end of input".to_string(),
            Some(c) => format!("'{c}'"),
        };
        ParseError {
            position: self.pos,
            expected: expected.to_string(),
            found,
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.error(&format!("'{c}'")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let node = match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    Node::Add(lhs, self.term()?)
                }
                Some('-') => {
                    self.pos += 1;
                    Node::Sub(lhs, self.term()?)
                }
                _ => return Ok(lhs),
            };
            lhs = Expr::raw(node);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let node = match self.peek() {
                Some('*') => {
                    self.pos += 1;
                    Node::Mul(lhs, self.factor()?)
                }
                Some('/') => {
                    self.pos += 1;
                    Node::Div(lhs, self.factor()?)
                }
                _ => return Ok(lhs),
            };
            lhs = Expr::raw(node);
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                if matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.') {
                    let x = self.number()?;
                    Ok(Expr::num(-x))
                } else {
                    Ok(Expr::raw(Node::Neg(self.factor()?)))
                }
            }
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => Ok(Expr::num(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.identifier(),
            _ => Err(self.error("expression")),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut end = start;
        let digits = |end: &mut usize| {
            while *end < bytes.len() && bytes[*end].is_ascii_digit() {
                *end += 1;
            }
        };
        digits(&mut end);
        if end < bytes.len() && bytes[end] == b'.' {
            end += 1;
            digits(&mut end);
        }
        if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
            let mut exp = end + 1;
            if exp < bytes.len() && (bytes[exp] == b'+' || bytes[exp] == b'-') {
                exp += 1;
            }
            if exp < bytes.len() && bytes[exp].is_ascii_digit() {
                end = exp;
                digits(&mut end);
            }
        }
        match self.src[start..end].parse::<f64>() {
            Ok(x) => {
                self.pos = end;
                Ok(x)
            }
            Err(_) => Err(self.error("number")),
        }
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.rest().len());
        let name = &self.src[start..start + len];
        self.pos += len;
        match Func::from_name(name) {
            Some(f) => {
                self.expect('(')?;
                let arg = self.expr()?;
                self.expect(')')?;
                Ok(Expr::raw(Node::Call(f, arg)))
            }
            None => Ok(Expr::var(Var::from_name(name))),
        }
    }
}
