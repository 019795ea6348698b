//! Built-in example functions with default curves and levels.

use serde::Serialize;

use crate::curve::{Curve, CurveError};
use crate::expr::{parse, CompiledFn, Expr, ExprError, Vars};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveSpec {
    pub components: &'static [&'static str],
    pub s_min: f64,
    /// End of the default parameter grid for certificates along the curve.
    pub s_max: f64,
}

impl CurveSpec {
    pub fn build(&self) -> Result<Curve, CurveError> {
        Curve::parse(self.components, self.s_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExampleEntry {
    pub id: &'static str,
    pub expression: &'static str,
    pub vars: &'static [&'static str],
    pub arity: usize,
    pub notes: &'static str,
    pub curves: &'static [CurveSpec],
    pub levels: &'static [f64],
}

impl ExampleEntry {
    pub fn var_names(&self) -> Vars {
        Vars::named(self.vars.iter().copied())
    }

    pub fn expr(&self) -> Result<Expr, ExprError> {
        parse(self.expression, &self.var_names())
    }

    pub fn compiled(&self) -> Result<CompiledFn, ExprError> {
        Ok(CompiledFn::new(&self.expr()?))
    }

    /// First default curve.
    pub fn default_curve(&self) -> Result<Curve, CurveError> {
        self.curves[0].build()
    }
}

static EXAMPLES: [ExampleEntry; 7] = [
    ExampleEntry {
        id: "e1",
        expression: "x/(y^2 + 1)",
        vars: &["x", "y"],
        arity: 2,
        notes: "E(f) = R: at t = 1 the classical inequality fails along the curve while the mixed form holds",
        curves: &[CurveSpec { components: &["(1 - 1/s)*(s^2 + 1)", "s"], s_min: 2.0, s_max: 1e6 }],
        levels: &[1.0],
    },
    ExampleEntry {
        id: "broughton",
        expression: "x*(x*y - 1)",
        vars: &["x", "y"],
        arity: 2,
        notes: "Broughton polynomial; 0 is an asymptotic critical value, mixed inequality with alpha = 1/18",
        curves: &[CurveSpec { components: &["1/(2*s)", "s"], s_min: 1.0, s_max: 1e6 }],
        levels: &[0.0],
    },
    ExampleEntry {
        id: "e3",
        expression: "z*(x^4 + (x*y - 1)^2)",
        vars: &["x", "y", "z"],
        arity: 3,
        notes: "0 is in K_inf but not a bifurcation value; no constants alpha, c work at t = 0",
        curves: &[CurveSpec { components: &["1/s", "s", "s"], s_min: 1.0, s_max: 1e6 }],
        levels: &[0.0],
    },
    ExampleEntry {
        id: "sqrtslope",
        expression: "x/sqrt(y^2 + 1)",
        vars: &["x", "y"],
        arity: 2,
        notes: "K_inf is empty; the mixed form needs the full power ||x|| (beta = 1), beta = 0.9 fails at t = 2",
        curves: &[CurveSpec { components: &["sqrt(s^2 + 1)", "s"], s_min: 1.0, s_max: 1e26 }],
        levels: &[2.0],
    },
    ExampleEntry {
        id: "linear",
        expression: "x1",
        vars: &["x1", "x2"],
        arity: 2,
        notes: "calibration: dist(x, {x1 = 0}) = |x1|, no asymptotic critical values",
        curves: &[CurveSpec { components: &["1", "s"], s_min: 1.0, s_max: 1e6 }],
        levels: &[0.0],
    },
    ExampleEntry {
        id: "posdef",
        expression: "x^2 + y^2 + 1",
        vars: &["x", "y"],
        arity: 2,
        notes: "calibration: the fiber over 0 is empty, so dist = 1 by convention",
        curves: &[CurveSpec { components: &["s", "0"], s_min: 1.0, s_max: 1e6 }],
        levels: &[0.0],
    },
    ExampleEntry {
        id: "emptyinf",
        expression: "(x*y - 1)^2 + x^2",
        vars: &["x", "y"],
        arity: 2,
        notes: "fiber over 0 is empty yet 0 is in K_inf, the empty-fiber branch of the proof",
        curves: &[CurveSpec { components: &["1/s", "s"], s_min: 1.0, s_max: 1e6 }],
        levels: &[0.0],
    },
];

pub fn examples() -> &'static [ExampleEntry] {
    &EXAMPLES
}

pub fn lookup(id: &str) -> Option<&'static ExampleEntry> {
    EXAMPLES.iter().find(|e| e.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_parse_and_curves_match() {
        for e in examples() {
            let f = e.expr().unwrap_or_else(|err| panic!("{}: {err}", e.id));
            assert_eq!(f.arity(), e.arity, "{}", e.id);
            assert_eq!(e.vars.len(), e.arity);
            assert!(!e.levels.is_empty());
            for c in e.curves {
                let curve = c.build().unwrap();
                assert_eq!(curve.arity(), e.arity, "{}", e.id);
                let p = curve.eval(c.s_min).unwrap();
                assert!(f.eval_at(&p).is_ok());
            }
        }
        assert_eq!(lookup("broughton").unwrap().expression, "x*(x*y - 1)");
        assert!(lookup("nope").is_none());
    }

    #[test]
    fn ids_are_unique() {
        let mut ids: Vec<_> = examples().iter().map(|e| e.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), examples().len());
    }

    #[test]
    fn default_curves_approach_their_level() {
        for e in examples().iter().filter(|e| !matches!(e.id, "linear" | "posdef" | "sqrtslope")) {
            let f = e.compiled().unwrap();
            let c = e.default_curve().unwrap();
            let gap = |s: f64| (f.value(c.eval(s).unwrap().coords()).unwrap() - e.levels[0]).abs();
            assert!(gap(1e4) < gap(10.0) && gap(1e4) < 1e-3, "{}", e.id);
        }
    }
}
