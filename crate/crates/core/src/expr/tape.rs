//! Flattened, value-numbered evaluation of one or more expressions.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{rational_to_f64, DomainError, Expr, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Op {
    Var(u32),
    Const(u64),
    Neg(u32),
    Add(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, u32),
    Sqrt(u32),
}

/// Straight-line program computing several expressions at once. Identical
/// subcomputations are shared.
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    outputs: Vec<u32>,
    arity: usize,
}

struct Builder {
    ops: Vec<Op>,
    by_op: HashMap<Op, u32>,
    by_ptr: HashMap<*const Node, u32>,
}

impl Builder {
    fn push(&mut self, op: Op) -> u32 {
        if let Some(&r) = self.by_op.get(&op) {
            return r;
        }
        let r = self.ops.len() as u32;
        self.ops.push(op);
        self.by_op.insert(op, r);
        r
    }

    fn emit(&mut self, e: &Expr) -> u32 {
        if let Some(&r) = self.by_ptr.get(&e.ptr()) {
            return r;
        }
        let op = match e.node() {
            Node::Var(i) => Op::Var(*i as u32),
            Node::Const(c) => Op::Const(rational_to_f64(c).to_bits()),
            Node::Neg(a) => Op::Neg(self.emit(a)),
            Node::Add(a, b) => {
                let (x, y) = (self.emit(a), self.emit(b));
                Op::Add(x, y)
            }
            Node::Mul(a, b) => {
                let (x, y) = (self.emit(a), self.emit(b));
                Op::Mul(x, y)
            }
            Node::Div(a, b) => {
                let (x, y) = (self.emit(a), self.emit(b));
                Op::Div(x, y)
            }
            Node::Pow(a, k) => Op::Pow(self.emit(a), *k),
            Node::Sqrt(a) => Op::Sqrt(self.emit(a)),
        };
        let r = self.push(op);
        self.by_ptr.insert(e.ptr(), r);
        r
    }
}

impl Tape {
    pub fn new(exprs: &[&Expr]) -> Tape {
        let arity = exprs.first().map_or(0, |e| e.arity());
        let mut b = Builder { ops: Vec::new(), by_op: HashMap::new(), by_ptr: HashMap::new() };
        let outputs = exprs.iter().map(|e| b.emit(e)).collect();
        Tape { ops: b.ops, outputs, arity }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Evaluates every output into `out`, using `regs` as scratch.
    pub fn eval_into(&self, x: &[f64], regs: &mut Vec<f64>, out: &mut [f64]) -> Result<(), DomainError> {
        debug_assert_eq!(x.len(), self.arity);
        regs.clear();
        regs.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Var(i) => x[i as usize],
                Op::Const(bits) => f64::from_bits(bits),
                Op::Neg(a) => -regs[a as usize],
                Op::Add(a, b) => regs[a as usize] + regs[b as usize],
                Op::Mul(a, b) => regs[a as usize] * regs[b as usize],
                Op::Div(a, b) => {
                    let d = regs[b as usize];
                    if d == 0.0 {
                        return Err(DomainError::DivisionByZero);
                    }
                    regs[a as usize] / d
                }
                Op::Pow(a, k) => regs[a as usize].powi(k as i32),
                Op::Sqrt(a) => {
                    let v = regs[a as usize];
                    if v < 0.0 {
                        return Err(DomainError::SqrtOfNegative);
                    }
                    v.sqrt()
                }
            };
            regs.push(v);
        }
        for (o, &r) in out.iter_mut().zip(&self.outputs) {
            let v = regs[r as usize];
            if !v.is_finite() {
                return Err(DomainError::NonFinite);
            }
            *o = v;
        }
        Ok(())
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

fn with_scratch<R>(f: impl FnOnce(&mut Vec<f64>) -> R) -> R {
    SCRATCH.with(|s| match s.try_borrow_mut() {
        Ok(mut regs) => f(&mut regs),
        Err(_) => f(&mut Vec::new()),
    })
}

/// An expression with its symbolic derivatives, compiled for repeated
/// evaluation. Cheap to share across threads.
#[derive(Debug)]
pub struct CompiledFn {
    expr: Expr,
    grad: Vec<Expr>,
    value: Tape,
    value_grad: Tape,
    hessian: OnceLock<(Vec<Expr>, Tape)>,
}

impl CompiledFn {
    pub fn new(expr: &Expr) -> Self {
        let grad = expr.grad().partials;
        let value = Tape::new(&[expr]);
        let mut all: Vec<&Expr> = vec![expr];
        all.extend(grad.iter());
        let value_grad = Tape::new(&all);
        CompiledFn { expr: expr.clone(), grad, value, value_grad, hessian: OnceLock::new() }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn arity(&self) -> usize {
        self.expr.arity()
    }

    pub fn gradient_exprs(&self) -> &[Expr] {
        &self.grad
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, DomainError> {
        let mut out = [0.0];
        with_scratch(|regs| self.value.eval_into(x, regs, &mut out))?;
        Ok(out[0])
    }

    /// Value and gradient; `grad` must have length `arity`.
    pub fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, DomainError> {
        let n = self.arity();
        let mut out = vec![0.0; n + 1];
        with_scratch(|regs| self.value_grad.eval_into(x, regs, &mut out))?;
        grad.copy_from_slice(&out[1..]);
        Ok(out[0])
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        let mut g = vec![0.0; self.arity()];
        self.value_grad(x, &mut g)?;
        Ok(g)
    }

    fn hessian_tape(&self) -> &Tape {
        &self
            .hessian
            .get_or_init(|| {
                let n = self.arity();
                let mut second: Vec<Expr> = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        // symmetric: reuse the upper triangle
                        if j < i {
                            let prev: Expr = second[j * n + i].clone();
                            second.push(prev);
                        } else {
                            second.push(self.grad[i].diff(j));
                        }
                    }
                }
                let mut all: Vec<&Expr> = vec![&self.expr];
                all.extend(self.grad.iter());
                all.extend(second.iter());
                let tape = Tape::new(&all);
                (second, tape)
            })
            .1
    }

    /// Value, gradient and row-major Hessian.
    pub fn value_grad_hess(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> Result<f64, DomainError> {
        let n = self.arity();
        let tape = self.hessian_tape();
        let mut out = vec![0.0; 1 + n + n * n];
        with_scratch(|regs| tape.eval_into(x, regs, &mut out))?;
        grad.copy_from_slice(&out[1..=n]);
        hess.copy_from_slice(&out[n + 1..]);
        Ok(out[0])
    }
}

impl Clone for CompiledFn {
    fn clone(&self) -> Self {
        CompiledFn::new(&self.expr)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse, Vars};
    use super::*;

    #[test]
    fn tape_matches_tree_bitwise() {
        let vars = Vars::named(["x", "y"]);
        let f = parse("x/sqrt(y^2 + 1) - x*(x*y - 1)^3/7 + (x*y - 1)^2", &vars).unwrap();
        let c = CompiledFn::new(&f);
        let grad = f.grad();
        for pt in [[0.1, 0.2], [-3.0, 4.5], [1e3, -2e-3]] {
            assert_eq!(c.value(&pt).unwrap().to_bits(), f.eval(&pt).unwrap().to_bits());
            let g = c.gradient(&pt).unwrap();
            let tree = grad.eval(&pt).unwrap();
            for (a, b) in g.iter().zip(&tree) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn shared_subexpressions_are_emitted_once() {
        let vars = Vars::named(["x", "y"]);
        let f = parse("(x*y - 1)^2 + (x*y - 1)^3", &vars).unwrap();
        let t = Tape::new(&[&f]);
        // x, y, x*y, 1, -1, x*y + -1, ^2, ^3, sum
        assert_eq!(t.len(), 9);
    }

    #[test]
    fn hessian_of_broughton() {
        let vars = Vars::named(["x", "y"]);
        let f = parse("x*(x*y - 1)", &vars).unwrap();
        let c = CompiledFn::new(&f);
        let (mut g, mut h) = (vec![0.0; 2], vec![0.0; 4]);
        c.value_grad_hess(&[2.0, 3.0], &mut g, &mut h).unwrap();
        assert_eq!(g, vec![2.0 * 2.0 * 3.0 - 1.0, 4.0]);
        assert_eq!(h, vec![6.0, 4.0, 4.0, 0.0]);
    }

    #[test]
    fn domain_errors_through_tape() {
        let vars = Vars::named(["x"]);
        let c = CompiledFn::new(&parse("sqrt(x) + 1/(x - 2)", &vars).unwrap());
        assert_eq!(c.value(&[-1.0]), Err(DomainError::SqrtOfNegative));
        assert_eq!(c.value(&[2.0]), Err(DomainError::DivisionByZero));
    }
}
