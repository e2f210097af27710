//! Covariate transforms: the small expression grammar used by model and
//! propensity term lists.
//!
//! A term is written as text. Plain column names, `exp(col)` and
//! `logabs(col)` have dedicated fast paths; anything else is parsed as an
//! arithmetic expression over column names with `+ - * / ^`, parentheses,
//! numeric literals and the functions `exp`, `log`, `logabs`, `abs`, `sqrt`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    LogAbs,
    Abs,
    Sqrt,
}

impl Func {
    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "logabs" => Func::LogAbs,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn apply<F: Scalar>(self, v: F) -> F {
        match self {
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::LogAbs => v.abs().ln(),
            Func::Abs => v.abs(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    fn eval<F: Scalar>(&self, row: usize, cols: &[(&str, &[F])]) -> F {
        match self {
            Expr::Num(v) => F::lit(*v),
            Expr::Var(name) => {
                // Resolved before evaluation; a miss cannot happen here.
                cols.iter().find(|(n, _)| n == name).map_or(F::nan(), |(_, c)| c[row])
            }
            Expr::Neg(e) => -e.eval(row, cols),
            Expr::Add(a, b) => a.eval(row, cols) + b.eval(row, cols),
            Expr::Sub(a, b) => a.eval(row, cols) - b.eval(row, cols),
            Expr::Mul(a, b) => a.eval(row, cols) * b.eval(row, cols),
            Expr::Div(a, b) => a.eval(row, cols) / b.eval(row, cols),
            Expr::Pow(a, b) => a.eval(row, cols).powf(b.eval(row, cols)),
            Expr::Call(f, e) => f.apply(e.eval(row, cols)),
        }
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(n) => {
                if !out.contains(&n.as_str()) {
                    out.push(n)
                }
            }
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Identity(String),
    Exp(String),
    LogAbs(String),
    Expr(Expr),
}

/// A named covariate transform. Serialized as its source text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Term {
    label: String,
    transform: Transform,
}

impl Term {
    pub fn parse(src: &str) -> Result<Self> {
        let label = src.trim().to_string();
        let expr = Parser::new(&label).parse_all()?;
        let transform = match &expr {
            Expr::Var(c) => Transform::Identity(c.clone()),
            Expr::Call(Func::Exp, inner) => match inner.as_ref() {
                Expr::Var(c) => Transform::Exp(c.clone()),
                _ => Transform::Expr(expr),
            },
            Expr::Call(Func::LogAbs, inner) => match inner.as_ref() {
                Expr::Var(c) => Transform::LogAbs(c.clone()),
                _ => Transform::Expr(expr),
            },
            Expr::Call(Func::Log, inner) => match inner.as_ref() {
                Expr::Call(Func::Abs, v) => match v.as_ref() {
                    Expr::Var(c) => Transform::LogAbs(c.clone()),
                    _ => Transform::Expr(expr),
                },
                _ => Transform::Expr(expr),
            },
            _ => Transform::Expr(expr),
        };
        Ok(Self { label, transform })
    }

    /// Identity transform of a single column.
    pub fn column(name: &str) -> Self {
        Self { label: name.to_string(), transform: Transform::Identity(name.to_string()) }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    /// Column names the transform reads.
    pub fn columns(&self) -> Vec<&str> {
        match &self.transform {
            Transform::Identity(c) | Transform::Exp(c) | Transform::LogAbs(c) => vec![c.as_str()],
            Transform::Expr(e) => {
                let mut v = Vec::new();
                e.collect_vars(&mut v);
                v
            }
        }
    }

    /// Evaluate over all rows. `lookup` resolves a column name to its values.
    pub fn evaluate<'a, F: Scalar>(
        &self,
        nrows: usize,
        lookup: impl Fn(&str) -> Option<&'a [F]>,
    ) -> Result<Vec<F>> {
        let resolve = |c: &str| lookup(c).ok_or_else(|| Error::UnknownColumn(c.to_string()));
        let out: Vec<F> = match &self.transform {
            Transform::Identity(c) => resolve(c)?.to_vec(),
            Transform::Exp(c) => resolve(c)?.iter().map(|v| v.exp()).collect(),
            Transform::LogAbs(c) => resolve(c)?.iter().map(|v| v.abs().ln()).collect(),
            Transform::Expr(e) => {
                let mut cols = Vec::new();
                for name in self.columns() {
                    cols.push((name, resolve(name)?));
                }
                (0..nrows).map(|i| e.eval(i, &cols)).collect()
            }
        };
        if out.len() != nrows {
            return Err(Error::Shape(format!("term `{}` has {} rows, expected {nrows}", self.label, out.len())));
        }
        if let Some(row) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTransform { term: self.label.clone(), row });
        }
        Ok(out)
    }

    /// Evaluate on a single covariate row given as `(name, value)` pairs.
    pub fn evaluate_row<F: Scalar>(&self, row: &[(&str, F)]) -> Result<F> {
        let get = |c: &str| {
            row.iter()
                .find(|(n, _)| *n == c)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::UnknownColumn(c.to_string()))
        };
        let v = match &self.transform {
            Transform::Identity(c) => get(c)?,
            Transform::Exp(c) => get(c)?.exp(),
            Transform::LogAbs(c) => get(c)?.abs().ln(),
            Transform::Expr(e) => {
                let mut owned = Vec::new();
                for name in self.columns() {
                    owned.push((name, [get(name)?]));
                }
                let cols: Vec<(&str, &[F])> = owned.iter().map(|(n, v)| (*n, &v[..])).collect();
                e.eval(0, &cols)
            }
        };
        if !v.is_finite() {
            return Err(Error::NonFiniteTransform { term: self.label.clone(), row: 0 });
        }
        Ok(v)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl TryFrom<String> for Term {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Term::parse(&s)
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.label
    }
}

impl std::str::FromStr for Term {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Term::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Tok>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, toks: Vec::new(), pos: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Expression { expr: self.src.to_string(), msg: msg.into() }
    }

    fn lex(&mut self) -> Result<()> {
        let chars: Vec<char> = self.src.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse::<f64>().map_err(|_| self.err(format!("bad number `{s}`")))?;
                self.toks.push(Tok::Num(v));
            } else if c.is_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                self.toks.push(Tok::Ident(chars[start..i].iter().collect()));
            } else if "+-*/^()".contains(c) {
                self.toks.push(Tok::Op(c));
                i += 1;
            } else {
                return Err(self.err(format!("unexpected character `{c}`")));
            }
        }
        Ok(())
    }

    fn parse_all(mut self) -> Result<Expr> {
        self.lex()?;
        if self.toks.is_empty() {
            return Err(self.err("empty term"));
        }
        let e = self.sum()?;
        if self.pos != self.toks.len() {
            return Err(self.err("trailing input"));
        }
        Ok(e)
    }

    fn peek_op(&self) -> Option<char> {
        match self.toks.get(self.pos) {
            Some(Tok::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.product()?;
            lhs = if op == '+' { Expr::Add(lhs.into(), rhs.into()) } else { Expr::Sub(lhs.into(), rhs.into()) };
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' { Expr::Mul(lhs.into(), rhs.into()) } else { Expr::Div(lhs.into(), rhs.into()) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Expr::Neg(self.unary()?.into()));
        }
        if self.peek_op() == Some('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            // right associative; binds tighter than unary minus on the left
            let exp = self.unary()?;
            return Ok(Expr::Pow(base.into(), exp.into()));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let tok = self.toks.get(self.pos).cloned().ok_or_else(|| self.err("unexpected end of input"))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Ident(name) => {
                if self.peek_op() == Some('(') {
                    let f = Func::from_name(&name).ok_or_else(|| self.err(format!("unknown function `{name}`")))?;
                    self.pos += 1;
                    let arg = self.sum()?;
                    self.expect(')')?;
                    Ok(Expr::Call(f, arg.into()))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Tok::Op('(') => {
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Op(c) => Err(self.err(format!("unexpected `{c}`"))),
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek_op() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }
}
