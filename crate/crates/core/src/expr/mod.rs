//! Immutable expression trees over `n` real variables.
//!
//! Trees are built from variables, exact rational constants, sums, products,
//! quotients, nonnegative integer powers and square roots. Differentiation is
//! symbolic and exact; evaluation happens in double precision and reports
//! domain violations (negative square-root arguments, zero denominators) as
//! values instead of producing NaN.
//!
//! Hot loops should go through [`CompiledFn`], which flattens the tree (and its
//! derivatives) into a value-numbered tape.

mod format;
mod parse;
mod poly;
mod tape;

use std::fmt;
use std::sync::Arc;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedMul, One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::ExprDisplay;
pub use parse::{max_indexed_var, parse, Vars};
pub use tape::{CompiledFn, Tape};

/// Exact rational constant stored in the tree.
pub type Rational = Ratio<i64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("square root of a negative number")]
    SqrtOfNegative,
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite intermediate value")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("variable index {index} out of range for arity {arity}")]
    VariableOutOfRange { index: usize, arity: usize },
    #[error("arity mismatch: expected {expected}, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// One node of an expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Var(usize),
    Const(Rational),
    Neg(Expr),
    Add(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, u32),
    Sqrt(Expr),
}

/// Shared, immutable expression over `arity` variables.
#[derive(Clone)]
pub struct Expr {
    node: Arc<Node>,
    arity: usize,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.arity == other.arity && (Arc::ptr_eq(&self.node, &other.node) || self.node == other.node)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr[{}]({})", self.arity, self.display(&Vars::indexed(self.arity)))
    }
}

/// Symbolic gradient: one partial derivative per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientHandle {
    pub partials: Vec<Expr>,
}

/// A point of `R^n` with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub(crate) Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self, DomainError> {
        if coords.iter().all(|c| c.is_finite()) {
            Ok(Point(coords))
        } else {
            Err(DomainError::NonFinite)
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub(crate) fn rational_to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl Expr {
    pub(crate) fn raw(node: Node, arity: usize) -> Self {
        Expr { node: Arc::new(node), arity }
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub(crate) fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.node)
    }

    pub fn var(index: usize, arity: usize) -> Result<Self, ExprError> {
        if index >= arity {
            return Err(ExprError::VariableOutOfRange { index, arity });
        }
        Ok(Self::raw(Node::Var(index), arity))
    }

    pub fn constant(value: Rational, arity: usize) -> Self {
        Self::raw(Node::Const(value), arity)
    }

    pub fn int(value: i64, arity: usize) -> Self {
        Self::constant(Rational::from_integer(value), arity)
    }

    fn as_const(&self) -> Option<&Rational> {
        match &*self.node {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    fn is_zero(&self) -> bool {
        self.as_const().is_some_and(|c| c.is_zero())
    }

    fn is_one(&self) -> bool {
        self.as_const().is_some_and(|c| c.is_one())
    }

    /// True when no variable occurs in the tree.
    pub fn is_constant(&self) -> bool {
        match &*self.node {
            Node::Var(_) => false,
            Node::Const(_) => true,
            Node::Neg(a) | Node::Pow(a, _) | Node::Sqrt(a) => a.is_constant(),
            Node::Add(a, b) | Node::Mul(a, b) | Node::Div(a, b) => a.is_constant() && b.is_constant(),
        }
    }

    fn check_arity(&self, other: &Expr) {
        assert_eq!(self.arity, other.arity, "combining expressions of different arity");
    }

    // Constant-folding constructors. These never change the value of the
    // expression wherever the original is defined.

    pub fn neg(a: &Expr) -> Expr {
        match a.as_const() {
            Some(c) => Expr::constant(-c, a.arity),
            None => Expr::raw(Node::Neg(a.clone()), a.arity),
        }
    }

    pub fn add(a: &Expr, b: &Expr) -> Expr {
        a.check_arity(b);
        if a.is_zero() {
            return b.clone();
        }
        if b.is_zero() {
            return a.clone();
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(s) = x.checked_add(y) {
                return Expr::constant(s, a.arity);
            }
        }
        Expr::raw(Node::Add(a.clone(), b.clone()), a.arity)
    }

    pub fn sub(a: &Expr, b: &Expr) -> Expr {
        Expr::add(a, &Expr::neg(b))
    }

    pub fn mul(a: &Expr, b: &Expr) -> Expr {
        a.check_arity(b);
        if a.is_zero() || b.is_zero() {
            return Expr::int(0, a.arity);
        }
        if a.is_one() {
            return b.clone();
        }
        if b.is_one() {
            return a.clone();
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(p) = x.checked_mul(y) {
                return Expr::constant(p, a.arity);
            }
        }
        Expr::raw(Node::Mul(a.clone(), b.clone()), a.arity)
    }

    pub fn div(a: &Expr, b: &Expr) -> Expr {
        a.check_arity(b);
        if b.is_one() {
            return a.clone();
        }
        if let Some(y) = b.as_const() {
            if !y.is_zero() {
                if a.is_zero() {
                    return a.clone();
                }
                if let Some(x) = a.as_const() {
                    if let Some(q) = checked_div(x, y) {
                        return Expr::constant(q, a.arity);
                    }
                }
            }
        }
        Expr::raw(Node::Div(a.clone(), b.clone()), a.arity)
    }

    pub fn pow(a: &Expr, k: u32) -> Expr {
        match k {
            0 => return Expr::int(1, a.arity),
            1 => return a.clone(),
            _ => {}
        }
        if let Some(c) = a.as_const() {
            if let Some(p) = checked_pow(c, k) {
                return Expr::constant(p, a.arity);
            }
        }
        Expr::raw(Node::Pow(a.clone(), k), a.arity)
    }

    pub fn sqrt(a: &Expr) -> Expr {
        Expr::raw(Node::Sqrt(a.clone()), a.arity)
    }

    /// Tree-walking evaluation. Deterministic and bit-identical to the
    /// compiled tape.
    pub fn eval(&self, x: &[f64]) -> Result<f64, DomainError> {
        if x.len() != self.arity {
            panic!("point of dimension {} for expression of arity {}", x.len(), self.arity);
        }
        let v = self.eval_inner(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DomainError::NonFinite)
        }
    }

    fn eval_inner(&self, x: &[f64]) -> Result<f64, DomainError> {
        Ok(match &*self.node {
            Node::Var(i) => x[*i],
            Node::Const(c) => rational_to_f64(c),
            Node::Neg(a) => -a.eval_inner(x)?,
            Node::Add(a, b) => a.eval_inner(x)? + b.eval_inner(x)?,
            Node::Mul(a, b) => a.eval_inner(x)? * b.eval_inner(x)?,
            Node::Div(a, b) => {
                let num = a.eval_inner(x)?;
                let den = b.eval_inner(x)?;
                if den == 0.0 {
                    return Err(DomainError::DivisionByZero);
                }
                num / den
            }
            Node::Pow(a, k) => a.eval_inner(x)?.powi(*k as i32),
            Node::Sqrt(a) => {
                let v = a.eval_inner(x)?;
                if v < 0.0 {
                    return Err(DomainError::SqrtOfNegative);
                }
                v.sqrt()
            }
        })
    }

    pub fn eval_at(&self, p: &Point) -> Result<f64, DomainError> {
        self.eval(p.coords())
    }

    /// Partial derivative with respect to variable `i`.
    pub fn diff(&self, i: usize) -> Expr {
        let n = self.arity;
        match &*self.node {
            Node::Var(j) => Expr::int(i64::from(*j == i), n),
            Node::Const(_) => Expr::int(0, n),
            Node::Neg(a) => Expr::neg(&a.diff(i)),
            Node::Add(a, b) => Expr::add(&a.diff(i), &b.diff(i)),
            Node::Mul(a, b) => Expr::add(&Expr::mul(&a.diff(i), b), &Expr::mul(a, &b.diff(i))),
            Node::Div(a, b) => {
                let da = a.diff(i);
                let db = b.diff(i);
                if db.is_zero() {
                    return Expr::div(&da, b);
                }
                let num = Expr::sub(&Expr::mul(&da, b), &Expr::mul(a, &db));
                Expr::div(&num, &Expr::pow(b, 2))
            }
            Node::Pow(a, k) => {
                let da = a.diff(i);
                if da.is_zero() {
                    return da;
                }
                let coeff = Expr::int(i64::from(*k), n);
                Expr::mul(&Expr::mul(&coeff, &Expr::pow(a, k - 1)), &da)
            }
            Node::Sqrt(a) => {
                let da = a.diff(i);
                if da.is_zero() {
                    return da;
                }
                Expr::div(&da, &Expr::mul(&Expr::int(2, n), self))
            }
        }
    }

    pub fn grad(&self) -> GradientHandle {
        GradientHandle { partials: (0..self.arity).map(|i| self.diff(i)).collect() }
    }

    /// Total degree when the tree is a polynomial, `None` otherwise.
    ///
    /// Quotients by constants and square roots of constants are allowed.
    /// The degree is that of the expanded polynomial, so cancellations are
    /// taken into account.
    pub fn degree(&self) -> Option<u32> {
        poly::degree(self)
    }

    /// Smallest absolute value of any denominator or square-root argument at
    /// `x`; `+inf` when the tree has neither.
    pub fn domain_margin(&self, x: &[f64]) -> f64 {
        fn walk(e: &Expr, x: &[f64], m: &mut f64) {
            match &*e.node {
                Node::Var(_) | Node::Const(_) => {}
                Node::Neg(a) | Node::Pow(a, _) => walk(a, x, m),
                Node::Sqrt(a) => {
                    if let Ok(v) = a.eval(x) {
                        *m = m.min(v.abs());
                    } else {
                        *m = 0.0;
                    }
                    walk(a, x, m);
                }
                Node::Div(a, b) => {
                    if let Ok(v) = b.eval(x) {
                        *m = m.min(v.abs());
                    } else {
                        *m = 0.0;
                    }
                    walk(a, x, m);
                    walk(b, x, m);
                }
                Node::Add(a, b) | Node::Mul(a, b) => {
                    walk(a, x, m);
                    walk(b, x, m);
                }
            }
        }
        let mut m = f64::INFINITY;
        walk(self, x, &mut m);
        m
    }

    /// Substitute univariate expressions for every variable, producing an
    /// expression in the substitutes' arity.
    pub fn compose(&self, subs: &[Expr]) -> Result<Expr, ExprError> {
        if subs.len() != self.arity {
            return Err(ExprError::ArityMismatch { expected: self.arity, got: subs.len() });
        }
        let target = subs.first().map_or(0, |s| s.arity);
        if let Some(bad) = subs.iter().find(|s| s.arity != target) {
            return Err(ExprError::ArityMismatch { expected: target, got: bad.arity });
        }
        fn go(e: &Expr, subs: &[Expr], target: usize) -> Expr {
            match &*e.node {
                Node::Var(i) => subs[*i].clone(),
                Node::Const(c) => Expr::constant(*c, target),
                Node::Neg(a) => Expr::raw(Node::Neg(go(a, subs, target)), target),
                Node::Add(a, b) => Expr::raw(Node::Add(go(a, subs, target), go(b, subs, target)), target),
                Node::Mul(a, b) => Expr::raw(Node::Mul(go(a, subs, target), go(b, subs, target)), target),
                Node::Div(a, b) => Expr::raw(Node::Div(go(a, subs, target), go(b, subs, target)), target),
                Node::Pow(a, k) => Expr::raw(Node::Pow(go(a, subs, target), *k), target),
                Node::Sqrt(a) => Expr::raw(Node::Sqrt(go(a, subs, target)), target),
            }
        }
        Ok(go(self, subs, target))
    }

    /// Number of distinct nodes (shared subtrees counted once).
    pub fn node_count(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        fn walk(e: &Expr, seen: &mut std::collections::HashSet<*const Node>) {
            if !seen.insert(e.ptr()) {
                return;
            }
            match &*e.node {
                Node::Var(_) | Node::Const(_) => {}
                Node::Neg(a) | Node::Pow(a, _) | Node::Sqrt(a) => walk(a, seen),
                Node::Add(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    walk(a, seen);
                    walk(b, seen);
                }
            }
        }
        walk(self, &mut seen);
        seen.len()
    }
}

impl GradientHandle {
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        self.partials.iter().map(|p| p.eval(x)).collect()
    }
}

fn checked_div(x: &Rational, y: &Rational) -> Option<Rational> {
    // (a/b) / (c/d) = (a*d) / (b*c)
    let num = x.numer().checked_mul(y.denom())?;
    let den = x.denom().checked_mul(y.numer())?;
    if den == 0 {
        return None;
    }
    Some(Rational::new(num, den))
}

fn checked_pow(c: &Rational, k: u32) -> Option<Rational> {
    let mut acc = Rational::one();
    for _ in 0..k {
        acc = acc.checked_mul(c)?;
    }
    Some(acc)
}
