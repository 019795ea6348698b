//! Text rendering that parses back to the same tree.

use std::fmt;

use super::{Expr, Node, Vars};

const ADD: u8 = 1;
const MUL: u8 = 2;
const NEG: u8 = 3;
const ATOM: u8 = 5;

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    vars: &'a Vars,
}

impl Expr {
    pub fn display<'a>(&'a self, vars: &'a Vars) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, vars }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self.expr, self.vars, 0)
    }
}

fn precedence(e: &Expr) -> u8 {
    match e.node() {
        Node::Add(..) => ADD,
        Node::Mul(..) | Node::Div(..) => MUL,
        Node::Neg(_) => NEG,
        Node::Pow(..) => 4,
        Node::Const(c) if *c.denom() != 1 => MUL,
        Node::Const(c) if *c.numer() < 0 => NEG,
        _ => ATOM,
    }
}

/// True when `e` prints as (possibly negated) plain integer literal, which
/// would merge with a following `/INT` into a rational literal.
fn is_plain_integer(e: &Expr) -> bool {
    match e.node() {
        Node::Const(c) => *c.denom() == 1 && *c.numer() >= 0,
        Node::Neg(a) => is_plain_integer(a),
        _ => false,
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, vars: &Vars, min_prec: u8) -> fmt::Result {
    let p = precedence(e);
    // Negative constants would parse back as negated literals, so they are
    // always parenthesized.
    let negative_const = matches!(e.node(), Node::Const(c) if *c.numer() < 0);
    let paren = p < min_prec || (negative_const && min_prec > 0);
    if paren {
        f.write_str("(")?;
    }
    match e.node() {
        Node::Var(i) => f.write_str(&vars.name(*i))?,
        Node::Const(c) => {
            if *c.denom() == 1 {
                write!(f, "{}", c.numer())?;
            } else {
                write!(f, "{}/{}", c.numer(), c.denom())?;
            }
        }
        Node::Neg(a) => {
            f.write_str("-")?;
            write_expr(f, a, vars, NEG)?;
        }
        Node::Add(a, b) => {
            write_expr(f, a, vars, ADD)?;
            match b.node() {
                Node::Neg(inner) => {
                    f.write_str(" - ")?;
                    write_expr(f, inner, vars, MUL)?;
                }
                _ => {
                    f.write_str(" + ")?;
                    write_expr(f, b, vars, MUL)?;
                }
            }
        }
        Node::Mul(a, b) | Node::Div(a, b) => {
            let op = if matches!(e.node(), Node::Mul(..)) { "*" } else { "/" };
            // `3/2` would be read back as one rational literal.
            if op == "/" && is_plain_integer(a) {
                write!(f, "(")?;
                write_expr(f, a, vars, 0)?;
                write!(f, ")")?;
            } else {
                write_expr(f, a, vars, MUL)?;
            }
            f.write_str(op)?;
            write_expr(f, b, vars, NEG)?;
        }
        Node::Pow(a, k) => {
            write_expr(f, a, vars, ATOM)?;
            write!(f, "^{k}")?;
        }
        Node::Sqrt(a) => {
            f.write_str("sqrt(")?;
            write_expr(f, a, vars, 0)?;
            f.write_str(")")?;
        }
    }
    if paren {
        f.write_str(")")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(text: &str, vars: &Vars) {
        let e = parse(text, vars).unwrap();
        let printed = e.display(vars).to_string();
        let again = parse(&printed, vars).unwrap_or_else(|err| panic!("{printed}: {err}"));
        assert_eq!(e, again, "{text} -> {printed}");
    }

    #[test]
    fn registry_like_roundtrips() {
        let xy = Vars::named(["x", "y"]);
        for t in [
            "x*(x*y - 1)",
            "x/(y^2 + 1)",
            "x/sqrt(y^2 + 1)",
            "(x*y - 1)^2 + x^2",
            "-x^2 - -y",
            "(3)/2 + 2/3^2",
            "x/1/2",
            "2*3/4",
            "(1/2)^3*x - (x - y) - (x + y)",
            "-(x*y)/(-x)",
        ] {
            roundtrip(t, &xy);
        }
    }

    #[test]
    fn derivative_trees_print_and_reparse() {
        let xy = Vars::named(["x", "y"]);
        let f = parse("x/sqrt(y^2 + 1)", &xy).unwrap();
        for p in f.grad().partials {
            let text = p.display(&xy).to_string();
            let q = parse(&text, &xy).unwrap();
            for pt in [[0.5, 0.25], [-2.0, 3.0]] {
                assert_eq!(p.eval(&pt).unwrap(), q.eval(&pt).unwrap(), "{text}");
            }
        }
    }

    fn arb_text() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            Just("x".to_string()),
            Just("y".to_string()),
            (0u32..20).prop_map(|k| k.to_string()),
            (1u32..9, 1u32..9).prop_map(|(p, q)| format!("{p}/{q}")),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) + ({b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} - {b}")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*{b}")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a}/({b})")),
                (inner.clone(), 0u32..4).prop_map(|(a, k)| format!("({a})^{k}")),
                inner.clone().prop_map(|a| format!("-{a}")),
                inner.prop_map(|a| format!("sqrt({a})")),
            ]
        })
    }

    proptest! {
        #[test]
        fn format_parse_roundtrip(text in arb_text()) {
            let vars = Vars::named(["x", "y"]);
            if let Ok(e) = parse(&text, &vars) {
                let printed = e.display(&vars).to_string();
                let again = parse(&printed, &vars).unwrap();
                prop_assert_eq!(e, again);
            }
        }
    }
}
