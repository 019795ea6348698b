//! Expansion into a sparse polynomial, used for exact total degrees.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use super::{Expr, Node};

type Monomial = Vec<u32>;
type Poly = BTreeMap<Monomial, BigRational>;

/// Expansions larger than this fall back to a syntactic degree bound.
const MAX_TERMS: usize = 20_000;

pub(super) fn degree(e: &Expr) -> Option<u32> {
    if !is_polynomial(e) {
        return None;
    }
    match expand(e) {
        Some(p) => Some(p.keys().map(|m| m.iter().sum::<u32>()).max().unwrap_or(0)),
        None => syntactic_degree(e),
    }
}

fn is_polynomial(e: &Expr) -> bool {
    match e.node() {
        Node::Var(_) | Node::Const(_) => true,
        Node::Neg(a) | Node::Pow(a, _) => is_polynomial(a),
        Node::Add(a, b) | Node::Mul(a, b) => is_polynomial(a) && is_polynomial(b),
        Node::Div(a, b) => is_polynomial(a) && b.is_constant() && b.eval(&vec![0.0; b.arity()]).is_ok_and(|v| v != 0.0),
        Node::Sqrt(a) => a.is_constant(),
    }
}

fn syntactic_degree(e: &Expr) -> Option<u32> {
    Some(match e.node() {
        Node::Var(_) => 1,
        Node::Const(_) => 0,
        Node::Neg(a) => syntactic_degree(a)?,
        Node::Add(a, b) => syntactic_degree(a)?.max(syntactic_degree(b)?),
        Node::Mul(a, b) => syntactic_degree(a)?.checked_add(syntactic_degree(b)?)?,
        Node::Pow(a, k) => syntactic_degree(a)?.checked_mul(*k)?,
        Node::Div(a, _) => syntactic_degree(a)?,
        Node::Sqrt(_) => 0,
    })
}

fn constant(value: BigRational, arity: usize) -> Poly {
    let mut p = Poly::new();
    if !value.is_zero() {
        p.insert(vec![0; arity], value);
    }
    p
}

fn add_into(acc: &mut Poly, other: Poly) {
    for (m, c) in other {
        let entry = acc.entry(m.clone()).or_insert_with(BigRational::zero);
        *entry += c;
        if entry.is_zero() {
            acc.remove(&m);
        }
    }
}

fn mul(a: &Poly, b: &Poly) -> Option<Poly> {
    let mut out = Poly::new();
    for (ma, ca) in a {
        for (mb, cb) in b {
            let m: Monomial = ma.iter().zip(mb).map(|(x, y)| x + y).collect();
            let mut single = Poly::new();
            single.insert(m, ca * cb);
            add_into(&mut out, single);
            if out.len() > MAX_TERMS {
                return None;
            }
        }
    }
    Some(out)
}

fn expand(e: &Expr) -> Option<Poly> {
    let n = e.arity();
    Some(match e.node() {
        Node::Var(i) => {
            let mut m = vec![0; n];
            m[*i] = 1;
            let mut p = Poly::new();
            p.insert(m, BigRational::one());
            p
        }
        Node::Const(c) => constant(BigRational::new(BigInt::from(*c.numer()), BigInt::from(*c.denom())), n),
        Node::Neg(a) => expand(a)?.into_iter().map(|(m, c)| (m, -c)).collect(),
        Node::Add(a, b) => {
            let mut p = expand(a)?;
            add_into(&mut p, expand(b)?);
            p
        }
        Node::Mul(a, b) => mul(&expand(a)?, &expand(b)?)?,
        Node::Pow(a, k) => {
            let base = expand(a)?;
            let mut acc = constant(BigRational::one(), n);
            for _ in 0..*k {
                acc = mul(&acc, &base)?;
            }
            acc
        }
        // Only reached for constant denominators / radicands (checked by
        // `is_polynomial`); the value enters through its double, which is
        // enough for degree purposes.
        Node::Div(a, b) => {
            let d = b.eval(&vec![0.0; n]).ok()?;
            let inv = BigRational::from_float(1.0 / d)?;
            expand(a)?.into_iter().map(|(m, c)| (m, c * &inv)).collect()
        }
        Node::Sqrt(a) => {
            let v = a.eval(&vec![0.0; n]).ok()?;
            match BigRational::from_float(v.sqrt()) {
                Some(r) => constant(r, n),
                None => return None,
            }
        }
    })
}
