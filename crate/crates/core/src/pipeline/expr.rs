//! Expressions over `x1, …, xk`: parsing and evaluation over any
//! [`Scalar`] (reals, intervals and forward-mode duals of either).
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := number | var | func '(' expr (',' expr)* ')' | '(' expr ')' | '-' factor
//! func   := pow | exp | ln | cos | abs
//! var    := 'x' digit+            (1-based)
//! ```

use std::fmt;

use super::interval::Interval;
use crate::error::{Error, Result};

/// Number types an expression can be evaluated over.
pub trait Scalar: Clone {
    fn constant(c: f64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn div(&self, o: &Self) -> std::result::Result<Self, String>;
    fn exp(&self) -> Self;
    fn ln(&self) -> std::result::Result<Self, String>;
    fn cos(&self) -> Self;
    fn sin(&self) -> Self;
    fn abs(&self) -> Self;
    /// Derivative of `abs`.
    fn sign(&self) -> Self;
    /// Derivative of `sign`: zero away from the kink, unbounded across it.
    fn sign_slope(&self) -> Self;
    fn powi(&self, n: i32) -> std::result::Result<Self, String>;
    fn scale(&self, c: f64) -> Self {
        self.mul(&Self::constant(c))
    }
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn div(&self, o: &Self) -> std::result::Result<Self, String> {
        if *o == 0.0 {
            Err("division by zero".into())
        } else {
            Ok(self / o)
        }
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> std::result::Result<Self, String> {
        if *self > 0.0 {
            Ok(f64::ln(*self))
        } else {
            Err(format!("logarithm of non-positive value {self}"))
        }
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn sign(&self) -> Self {
        if *self > 0.0 {
            1.0
        } else if *self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
    fn sign_slope(&self) -> Self {
        0.0
    }
    fn powi(&self, n: i32) -> std::result::Result<Self, String> {
        if n < 0 && *self == 0.0 {
            Err("negative power of zero".into())
        } else {
            Ok(f64::powi(*self, n))
        }
    }
}

impl Scalar for Interval {
    fn constant(c: f64) -> Self {
        Interval::point(c)
    }
    fn add(&self, o: &Self) -> Self {
        *self + *o
    }
    fn sub(&self, o: &Self) -> Self {
        *self - *o
    }
    fn mul(&self, o: &Self) -> Self {
        *self * *o
    }
    fn neg(&self) -> Self {
        -*self
    }
    fn div(&self, o: &Self) -> std::result::Result<Self, String> {
        self.checked_div(o)
            .ok_or_else(|| format!("division by an interval containing zero [{}, {}]", o.lo, o.hi))
    }
    fn exp(&self) -> Self {
        Interval::exp(self)
    }
    fn ln(&self) -> std::result::Result<Self, String> {
        Interval::ln(self).ok_or_else(|| format!("logarithm over [{}, {}]", self.lo, self.hi))
    }
    fn cos(&self) -> Self {
        Interval::cos(self)
    }
    fn sin(&self) -> Self {
        Interval::sin(self)
    }
    fn abs(&self) -> Self {
        Interval::abs(self)
    }
    fn sign(&self) -> Self {
        Interval::sign(self)
    }
    fn sign_slope(&self) -> Self {
        if self.lo > 0.0 || self.hi < 0.0 {
            Interval::point(0.0)
        } else {
            Interval::new(f64::NEG_INFINITY, f64::INFINITY)
        }
    }
    fn powi(&self, n: i32) -> std::result::Result<Self, String> {
        Interval::powi(self, n).ok_or_else(|| format!("negative power over [{}, {}]", self.lo, self.hi))
    }
}

/// Forward-mode dual number: a value and its gradient. An empty gradient
/// stands for zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual<T> {
    pub value: T,
    pub grad: Vec<T>,
}

impl<T: Scalar> Dual<T> {
    /// The `i`-th of `n` independent variables at `value`.
    pub fn variable(value: T, i: usize, n: usize) -> Self {
        let grad = (0..n).map(|j| T::constant(if i == j { 1.0 } else { 0.0 })).collect();
        Dual { value, grad }
    }

    fn map_grad(&self, f: impl Fn(&T) -> T) -> Vec<T> {
        self.grad.iter().map(f).collect()
    }

    fn zip_grad(&self, o: &Self, f: impl Fn(Option<&T>, Option<&T>) -> T) -> Vec<T> {
        let n = self.grad.len().max(o.grad.len());
        (0..n).map(|i| f(self.grad.get(i), o.grad.get(i))).collect()
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn constant(c: f64) -> Self {
        Dual {
            value: T::constant(c),
            grad: Vec::new(),
        }
    }
    fn add(&self, o: &Self) -> Self {
        Dual {
            value: self.value.add(&o.value),
            grad: self.zip_grad(o, |a, b| match (a, b) {
                (Some(a), Some(b)) => a.add(b),
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b.clone(),
                (None, None) => T::constant(0.0),
            }),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        Dual {
            value: self.value.sub(&o.value),
            grad: self.zip_grad(o, |a, b| match (a, b) {
                (Some(a), Some(b)) => a.sub(b),
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b.neg(),
                (None, None) => T::constant(0.0),
            }),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        Dual {
            value: self.value.mul(&o.value),
            grad: self.zip_grad(o, |a, b| match (a, b) {
                (Some(a), Some(b)) => a.mul(&o.value).add(&self.value.mul(b)),
                (Some(a), None) => a.mul(&o.value),
                (None, Some(b)) => self.value.mul(b),
                (None, None) => T::constant(0.0),
            }),
        }
    }
    fn neg(&self) -> Self {
        Dual {
            value: self.value.neg(),
            grad: self.map_grad(T::neg),
        }
    }
    fn div(&self, o: &Self) -> std::result::Result<Self, String> {
        let q = self.value.div(&o.value)?;
        let grad = (0..self.grad.len().max(o.grad.len()))
            .map(|i| {
                let num = match (self.grad.get(i), o.grad.get(i)) {
                    (Some(a), Some(b)) => a.sub(&q.mul(b)),
                    (Some(a), None) => a.clone(),
                    (None, Some(b)) => q.mul(b).neg(),
                    (None, None) => T::constant(0.0),
                };
                num.div(&o.value)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Dual { value: q, grad })
    }
    fn exp(&self) -> Self {
        let e = self.value.exp();
        Dual {
            grad: self.map_grad(|g| e.mul(g)),
            value: e,
        }
    }
    fn ln(&self) -> std::result::Result<Self, String> {
        let value = self.value.ln()?;
        let grad = self
            .grad
            .iter()
            .map(|g| g.div(&self.value))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Dual { value, grad })
    }
    fn cos(&self) -> Self {
        let s = self.value.sin();
        Dual {
            value: self.value.cos(),
            grad: self.map_grad(|g| s.mul(g).neg()),
        }
    }
    fn sin(&self) -> Self {
        let c = self.value.cos();
        Dual {
            value: self.value.sin(),
            grad: self.map_grad(|g| c.mul(g)),
        }
    }
    fn abs(&self) -> Self {
        let s = self.value.sign();
        Dual {
            value: self.value.abs(),
            grad: self.map_grad(|g| s.mul(g)),
        }
    }
    fn sign(&self) -> Self {
        let s = self.value.sign_slope();
        Dual {
            value: self.value.sign(),
            grad: self.map_grad(|g| s.mul(g)),
        }
    }
    fn sign_slope(&self) -> Self {
        Dual {
            value: self.value.sign_slope(),
            grad: Vec::new(),
        }
    }
    fn powi(&self, n: i32) -> std::result::Result<Self, String> {
        let value = self.value.powi(n)?;
        if n == 0 {
            return Ok(Dual {
                value,
                grad: Vec::new(),
            });
        }
        let d = self.value.powi(n - 1)?.scale(n as f64);
        Ok(Dual {
            value,
            grad: self.map_grad(|g| d.mul(g)),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    PowI(Box<Node>, i32),
    Exp(Box<Node>),
    Ln(Box<Node>),
    Cos(Box<Node>),
    Abs(Box<Node>),
}

/// A parsed expression together with its source text.
#[derive(Clone, PartialEq)]
pub struct Expr {
    root: Node,
    arity: usize,
    source: String,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    /// Parses an expression with variables `x1, …, x{max_vars}`.
    pub fn parse(source: &str, max_vars: usize) -> Result<Self> {
        let tokens = lex(source)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            max_vars,
            arity: 0,
            end: source.chars().count() + 1,
        };
        let root = p.expr()?;
        if let Some(t) = p.tokens.get(p.pos) {
            return Err(Error::Expression {
                column: t.column,
                message: format!("unexpected {}", t.kind),
            });
        }
        Ok(Expr {
            root,
            arity: p.arity,
            source: source.to_string(),
        })
    }

    /// Highest variable index used (so `x1..x_arity` may appear).
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluates at a real point.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.eval_generic(x).map_err(Error::Domain)
    }

    /// Evaluates over any scalar type.
    pub fn eval_generic<T: Scalar>(&self, x: &[T]) -> std::result::Result<T, String> {
        if x.len() < self.arity {
            return Err(format!("expression needs {} variables, got {}", self.arity, x.len()));
        }
        eval_node(&self.root, x)
    }
}

fn eval_node<T: Scalar>(n: &Node, x: &[T]) -> std::result::Result<T, String> {
    Ok(match n {
        Node::Num(c) => T::constant(*c),
        Node::Var(i) => x[*i].clone(),
        Node::Neg(a) => eval_node(a, x)?.neg(),
        Node::Add(a, b) => eval_node(a, x)?.add(&eval_node(b, x)?),
        Node::Sub(a, b) => eval_node(a, x)?.sub(&eval_node(b, x)?),
        Node::Mul(a, b) => eval_node(a, x)?.mul(&eval_node(b, x)?),
        Node::Div(a, b) => eval_node(a, x)?.div(&eval_node(b, x)?)?,
        Node::Pow(a, b) => {
            let base = eval_node(a, x)?;
            let e = eval_node(b, x)?;
            e.mul(&base.ln().map_err(|m| format!("pow with non-integer exponent: {m}"))?)
                .exp()
        }
        Node::PowI(a, k) => eval_node(a, x)?.powi(*k)?,
        Node::Exp(a) => eval_node(a, x)?.exp(),
        Node::Ln(a) => eval_node(a, x)?.ln()?,
        Node::Cos(a) => eval_node(a, x)?.cos(),
        Node::Abs(a) => eval_node(a, x)?.abs(),
    })
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Num(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Num(v) => write!(f, "number {v}"),
            Kind::Ident(s) => write!(f, "identifier `{s}`"),
            Kind::Op(c) => write!(f, "`{c}`"),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    kind: Kind,
    column: usize,
}

fn lex(source: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
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
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text.parse().map_err(|_| Error::Expression {
                column,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token {
                kind: Kind::Num(v),
                column,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                kind: Kind::Ident(chars[start..i].iter().collect()),
                column,
            });
        } else if "+-*/(),".contains(c) {
            out.push(Token {
                kind: Kind::Op(c),
                column,
            });
            i += 1;
        } else {
            return Err(Error::Expression {
                column,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    max_vars: usize,
    arity: usize,
    end: usize,
}

impl Parser {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token { kind: Kind::Op(c), .. }) => Some(*c),
            _ => None,
        }
    }

    fn column(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.column)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Expression {
            column: self.column(),
            message: message.into(),
        })
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            match self.tokens.get(self.pos) {
                Some(t) => self.fail(format!("expected `{op}`, found {}", t.kind)),
                None => self.fail(format!("expected `{op}`, found end of input")),
            }
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Node> {
        let Some(tok) = self.tokens.get(self.pos).cloned() else {
            return self.fail("unexpected end of input");
        };
        match tok.kind {
            Kind::Num(v) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Kind::Op('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.factor()?)))
            }
            Kind::Op('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Kind::Op(c) => self.fail(format!("unexpected `{c}`")),
            Kind::Ident(name) => {
                self.pos += 1;
                if let Some(digits) = name.strip_prefix('x') {
                    if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
                        return self.variable(digits, tok.column);
                    }
                }
                self.call(&name, tok.column)
            }
        }
    }

    fn variable(&mut self, digits: &str, column: usize) -> Result<Node> {
        let index: usize = digits.parse().map_err(|_| Error::Expression {
            column,
            message: format!("variable index `{digits}` is too large"),
        })?;
        if index == 0 || index > self.max_vars {
            return Err(Error::Expression {
                column,
                message: format!("unknown identifier `x{digits}`: variables are x1..x{}", self.max_vars),
            });
        }
        self.arity = self.arity.max(index);
        Ok(Node::Var(index - 1))
    }

    fn call(&mut self, name: &str, column: usize) -> Result<Node> {
        let arity = match name {
            "pow" => 2,
            "exp" | "ln" | "cos" | "abs" => 1,
            _ => {
                return Err(Error::Expression {
                    column,
                    message: format!("unknown identifier `{name}`"),
                })
            }
        };
        self.expect('(')?;
        let mut args = vec![self.expr()?];
        while self.peek_op() == Some(',') {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(')')?;
        if args.len() != arity {
            return Err(Error::Expression {
                column,
                message: format!("`{name}` takes {arity} argument(s), got {}", args.len()),
            });
        }
        let mut args = args.into_iter();
        let a = Box::new(args.next().expect("one argument"));
        Ok(match name {
            "pow" => {
                let b = args.next().expect("two arguments");
                match integer_constant(&b) {
                    Some(k) => Node::PowI(a, k),
                    None => Node::Pow(a, Box::new(b)),
                }
            }
            "exp" => Node::Exp(a),
            "ln" => Node::Ln(a),
            "cos" => Node::Cos(a),
            _ => Node::Abs(a),
        })
    }
}

/// An exponent written as an integer literal, possibly negated.
fn integer_constant(n: &Node) -> Option<i32> {
    let v = match n {
        Node::Num(v) => *v,
        Node::Neg(inner) => match **inner {
            Node::Num(v) => -v,
            _ => return None,
        },
        _ => return None,
    };
    (v.fract() == 0.0 && v.abs() <= 1e6).then_some(v as i32)
}
