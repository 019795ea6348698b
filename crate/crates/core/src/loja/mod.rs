//! Constants of the classical and mixed Łojasiewicz inequalities.
//!
//! Both forms bound the distance to the fiber `{f = t}` from above:
//!
//! - classical: `|f - t|^alpha + |f - t|^beta >= c * dist(x, {f = t})`
//! - mixed: `|f - t|^alpha + ||x||^beta * |f - t| >= c * dist(x, {f = t})`
//!
//! [`fit_constants`] estimates the best `c` over a sample set,
//! [`test_inequality`] checks a given `c`, and [`counterexample_certificate`]
//! follows a curve along which the ratio `LHS / dist` collapses.

mod certificate;
mod sample;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::CurveError;
use crate::expr::{norm, CompiledFn, DomainError, Point};
use crate::levelset::{
    dist_oracle_adaptive, project_to_levelset, AdaptiveOracle, LevelSetError, LevelSpec, ProjectionOptions,
    EMPTY_FIBER_DISTANCE,
};

pub use certificate::{
    counterexample_certificate, counterexample_sweep, write_ratio_csv, CertificateOptions, CrossCheck,
    CurveVerdict, FailureCertificate, RatioSample,
};
pub use sample::{Region, SamplerSpec};

/// Minimum sample count accepted by [`fit_constants`].
pub const MIN_SAMPLES: usize = 100;
/// Samples closer than `FIBER_EXCLUSION * f_tol` to the fiber are dropped.
pub const FIBER_EXCLUSION: f64 = 10.0;
/// Largest tolerated share of samples with no distance estimate.
pub const MAX_INCONCLUSIVE_SHARE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum LojaError {
    #[error("invalid form: {0}")]
    InvalidForm(&'static str),
    #[error("r_bound({n}, {d}) overflows u64")]
    RBoundOverflow { n: u32, d: u32 },
    #[error("r_bound needs n >= 1 and d >= 1")]
    RBoundArgs,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid sampler: {0}")]
    BadSampler(&'static str),
    #[error("every sample lies within the fiber exclusion band")]
    AllNearFiber,
    #[error("distance backend inconclusive on {failed} of {total} samples")]
    Inconclusive { failed: usize, total: usize },
    #[error("constant c must be positive")]
    BadConstant,
    #[error("curve does not escape to infinity")]
    CurveNotEscaping,
    #[error("sampler dimension {sampler} differs from arity {arity}")]
    ArityMismatch { sampler: usize, arity: usize },
    #[error(transparent)]
    Level(#[from] LevelSetError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// `d (3d - 3)^(n - 1)`, or 1 when `d = 1`.
pub fn r_bound(n: u32, d: u32) -> Result<u64, LojaError> {
    if n == 0 || d == 0 {
        return Err(LojaError::RBoundArgs);
    }
    if d == 1 {
        return Ok(1);
    }
    let base = 3 * u64::from(d) - 3;
    base.checked_pow(n - 1)
        .and_then(|p| p.checked_mul(u64::from(d)))
        .ok_or(LojaError::RBoundOverflow { n, d })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    Classical,
    Mixed,
}

/// Left-hand side of one of the two inequalities. For the mixed form `beta`
/// is the exponent on `||x||`; for the classical form it is the second
/// exponent on `|f - t|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LojaForm {
    pub kind: FormKind,
    pub alpha: f64,
    pub beta: f64,
}

impl LojaForm {
    pub fn new(kind: FormKind, alpha: f64, beta: f64) -> Result<Self, LojaError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(LojaError::InvalidForm("alpha must be positive"));
        }
        if !beta.is_finite() {
            return Err(LojaError::InvalidForm("beta must be finite"));
        }
        if kind == FormKind::Classical && !(beta > 0.0) {
            return Err(LojaError::InvalidForm("classical form needs beta > 0"));
        }
        Ok(LojaForm { kind, alpha, beta })
    }

    pub fn mixed(alpha: f64) -> Result<Self, LojaError> {
        Self::new(FormKind::Mixed, alpha, 1.0)
    }

    pub fn classical(alpha: f64, beta: f64) -> Result<Self, LojaError> {
        Self::new(FormKind::Classical, alpha, beta)
    }

    /// LHS for `gap = |f(x) - t|` and `norm = ||x||`.
    pub fn lhs(&self, gap: f64, norm: f64) -> f64 {
        match self.kind {
            FormKind::Classical => gap.powf(self.alpha) + gap.powf(self.beta),
            FormKind::Mixed => gap.powf(self.alpha) + norm.powf(self.beta) * gap,
        }
    }

    pub fn lhs_at(&self, f: &CompiledFn, t: f64, x: &[f64]) -> Result<f64, DomainError> {
        Ok(self.lhs((f.value(x)? - t).abs(), norm(x)))
    }
}

/// How distances to the fiber are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistBackend {
    /// Multi-start projection; an upper bound on the distance.
    Projection(ProjectionOptions),
    /// Adaptive grid oracle, arity <= 3.
    Oracle(AdaptiveOracle),
}

impl DistBackend {
    /// Oracle for arity <= 2, projection otherwise.
    pub fn default_for_fit(arity: usize) -> Self {
        if arity <= 2 {
            DistBackend::Oracle(AdaptiveOracle::default())
        } else {
            DistBackend::Projection(ProjectionOptions::default())
        }
    }

    /// Oracle for arity <= 3, projection otherwise.
    pub fn default_for_test(arity: usize) -> Self {
        if arity <= 3 {
            DistBackend::Oracle(AdaptiveOracle::default())
        } else {
            DistBackend::Projection(ProjectionOptions::default())
        }
    }

    pub fn source(&self) -> DistSource {
        match self {
            DistBackend::Projection(_) => DistSource::Projection,
            DistBackend::Oracle(_) => DistSource::Oracle,
        }
    }

    /// Distance estimate, `None` when the backend cannot decide. An empty
    /// fiber reports the conventional distance 1. `salt` varies the
    /// projection seed between samples.
    ///
    /// The projection tightens `f_tol` to a millionth of the gap at `x`;
    /// otherwise, where `f` is flat, far points with a tiny residual pass as
    /// fiber points and inflate the distance.
    pub fn distance(&self, level: &LevelSpec<'_>, x: &[f64], salt: u64) -> Result<Option<f64>, LojaError> {
        match self {
            DistBackend::Projection(opts) => {
                let gap = (level.f.value(x)? - level.t).abs();
                let f_tol = if gap > 0.0 { level.f_tol.min(1e-6 * gap) } else { level.f_tol };
                let level = LevelSpec { f_tol, ..*level };
                match project_escalating(&level, x, opts, salt) {
                    Err(LevelSetError::Domain(_)) => Ok(None),
                    r => Ok(r?),
                }
            }
            DistBackend::Oracle(opts) => {
                let d = dist_oracle_adaptive(level, x, opts)?;
                Ok(Some(if d.found() { d.dist } else { EMPTY_FIBER_DISTANCE }))
            }
        }
    }
}

/// Start-count multipliers tried before a projection counts as inconclusive.
const ESCALATION: [usize; 3] = [1, 4, 16];

/// Projection distance, retrying with more starts while inconclusive.
/// `None` when every attempt stayed inconclusive.
pub(crate) fn project_escalating(
    level: &LevelSpec<'_>,
    x: &[f64],
    opts: &ProjectionOptions,
    salt: u64,
) -> Result<Option<f64>, LevelSetError> {
    for factor in ESCALATION {
        let o = ProjectionOptions { seed: opts.seed.wrapping_add(salt), starts: opts.starts * factor, ..*opts };
        match project_to_levelset(level, x, &o) {
            Ok(p) if p.feasible || p.empty_fiber_presumed => return Ok(Some(p.dist_upper)),
            Ok(_) | Err(LevelSetError::Inconclusive { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistSource {
    Projection,
    Oracle,
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRatio {
    pub index: usize,
    pub point: Point,
    pub lhs: f64,
    pub dist: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LojaFitResult {
    pub form: LojaForm,
    pub t: f64,
    pub c_star: f64,
    /// Sample attaining `c_star`.
    pub witness: Point,
    pub samples_used: usize,
    pub dist_source: DistSource,
    pub seed: u64,
    pub excluded_near_fiber: usize,
    pub inconclusive: usize,
    /// Every used sample, in draw order.
    #[serde(skip)]
    pub samples: Vec<SampleRatio>,
}

struct Evaluated {
    used: Vec<SampleRatio>,
    excluded: usize,
    inconclusive: usize,
}

fn evaluate(
    f: &CompiledFn,
    t: f64,
    form: &LojaForm,
    points: Vec<Vec<f64>>,
    backend: &DistBackend,
) -> Result<Evaluated, LojaError> {
    let level = LevelSpec::with_default_tol(f, t);
    let cutoff = FIBER_EXCLUSION * level.f_tol;
    let total = points.len();
    let outcomes: Vec<Option<(Vec<f64>, f64, f64)>> = points
        .into_par_iter()
        .enumerate()
        .map(|(i, x)| -> Result<_, LojaError> {
            let Ok(lhs) = form.lhs_at(f, t, &x) else { return Ok(None) };
            Ok(backend.distance(&level, &x, i as u64)?.map(|d| (x, lhs, d)))
        })
        .collect::<Result<_, _>>()?;

    let mut used = Vec::new();
    let mut excluded = 0;
    let mut inconclusive = 0;
    for (index, o) in outcomes.into_iter().enumerate() {
        match o {
            None => inconclusive += 1,
            Some((_, _, d)) if d < cutoff => excluded += 1,
            Some((x, lhs, dist)) => used.push(SampleRatio { index, point: Point(x), lhs, dist, ratio: lhs / dist }),
        }
    }
    if inconclusive as f64 > MAX_INCONCLUSIVE_SHARE * total as f64 {
        return Err(LojaError::Inconclusive { failed: inconclusive, total });
    }
    if used.is_empty() {
        return Err(LojaError::AllNearFiber);
    }
    Ok(Evaluated { used, excluded, inconclusive })
}

fn draw(f: &CompiledFn, sampler: &SamplerSpec) -> Result<Vec<Vec<f64>>, LojaError> {
    if sampler.count < MIN_SAMPLES {
        return Err(LojaError::TooFewSamples { needed: MIN_SAMPLES, got: sampler.count });
    }
    let points = sampler.draw(f.arity())?;
    Ok(points)
}

/// Smallest ratio `LHS / dist` over the samples, with the point attaining it.
/// Ties keep the earliest sample.
pub fn fit_constants(
    f: &CompiledFn,
    t: f64,
    form: &LojaForm,
    sampler: &SamplerSpec,
    backend: &DistBackend,
) -> Result<LojaFitResult, LojaError> {
    let points = draw(f, sampler)?;
    let ev = evaluate(f, t, form, points, backend)?;
    let best = ev
        .used
        .iter()
        .fold(None::<&SampleRatio>, |b, s| match b {
            Some(b) if b.ratio <= s.ratio => Some(b),
            _ => Some(s),
        })
        .expect("used is nonempty");
    Ok(LojaFitResult {
        form: *form,
        t,
        c_star: best.ratio,
        witness: best.point.clone(),
        samples_used: ev.used.len(),
        dist_source: backend.source(),
        seed: sampler.seed,
        excluded_near_fiber: ev.excluded,
        inconclusive: ev.inconclusive,
        samples: ev.used,
    })
}

/// Samples where `LHS < c * dist`; an empty list means the inequality held
/// on every sample.
pub fn test_inequality(
    f: &CompiledFn,
    t: f64,
    form: &LojaForm,
    c: f64,
    sampler: &SamplerSpec,
    backend: &DistBackend,
) -> Result<Vec<SampleRatio>, LojaError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(LojaError::BadConstant);
    }
    let points = draw(f, sampler)?;
    let ev = evaluate(f, t, form, points, backend)?;
    Ok(ev.used.into_iter().filter(|s| s.lhs < c * s.dist).collect())
}

#[derive(Serialize)]
struct FitReportJson<'a> {
    function_id: &'a str,
    t: f64,
    form: &'a LojaForm,
    c_star: f64,
    witness: &'a Point,
    samples_used: usize,
    dist_source: DistSource,
    seed: u64,
}

/// JSON report `{function_id, t, form, c_star, witness, samples_used,
/// dist_source, seed}`.
pub fn fit_report_json(function_id: &str, fit: &LojaFitResult) -> Result<String, LojaError> {
    let report = FitReportJson {
        function_id,
        t: fit.t,
        form: &fit.form,
        c_star: fit.c_star,
        witness: &fit.witness,
        samples_used: fit.samples_used,
        dist_source: fit.dist_source,
        seed: fit.seed,
    };
    Ok(serde_json::to_string_pretty(&report)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Curve;
    use crate::expr::{parse, Vars};
    use proptest::prelude::*;

    fn compiled(text: &str, vars: &[&str]) -> CompiledFn {
        CompiledFn::new(&parse(text, &Vars::named(vars.iter().copied())).unwrap())
    }

    fn annulus(r_min: f64, r_max: f64, count: usize, seed: u64) -> SamplerSpec {
        SamplerSpec { region: Region::Annulus { r_min, r_max }, count, seed }
    }

    fn projection() -> DistBackend {
        DistBackend::Projection(ProjectionOptions::default())
    }

    #[test]
    fn r_bound_examples() {
        assert_eq!(r_bound(2, 3).unwrap(), 18);
        assert_eq!(r_bound(5, 1).unwrap(), 1);
        assert_eq!(r_bound(3, 2).unwrap(), 18);
        assert!(matches!(r_bound(1000, 1000), Err(LojaError::RBoundOverflow { .. })));
        assert!(matches!(r_bound(0, 3), Err(LojaError::RBoundArgs)));
    }

    proptest! {
        #[test]
        fn r_bound_monotone(n in 1u32..8, d in 1u32..8) {
            prop_assert_eq!(r_bound(n, 1).unwrap(), 1);
            let r = r_bound(n, d).unwrap();
            prop_assert!(r_bound(n + 1, d).unwrap() >= r);
            prop_assert!(r_bound(n, d + 1).unwrap() >= r);
        }

        #[test]
        fn mixed_beta_monotone(gap in 0.0f64..=1.0, r in 1.0f64..1e6, alpha in 0.01f64..2.0) {
            let one = LojaForm::new(FormKind::Mixed, alpha, 1.0).unwrap();
            let less = LojaForm::new(FormKind::Mixed, alpha, 0.9).unwrap();
            prop_assert!(one.lhs(gap, r) >= less.lhs(gap, r));
        }
    }

    #[test]
    fn form_validation() {
        assert!(LojaForm::mixed(0.0).is_err());
        assert!(LojaForm::classical(0.5, 0.0).is_err());
        assert!(LojaForm::new(FormKind::Mixed, 1.0, -0.5).is_ok());
    }

    #[test]
    fn linear_constant_is_one() {
        let f = compiled("x1", &["x1", "x2"]);
        let form = LojaForm::mixed(1.0).unwrap();
        let fit = fit_constants(&f, 0.0, &form, &annulus(0.0, 1.0, 200, 3), &projection()).unwrap();
        assert!(fit.c_star >= 1.0 - 1e-9, "{}", fit.c_star);
        // LHS = |x1| (1 + ||x||) and dist = |x1|
        for s in &fit.samples {
            let expect = 1.0 + s.point.norm();
            assert!((s.ratio - expect).abs() <= 1e-6 * expect);
        }
    }

    #[test]
    fn linear_violations() {
        let f = compiled("x1", &["x1", "x2"]);
        let form = LojaForm::mixed(1.0).unwrap();
        let sampler = annulus(0.0, 1.0, 200, 5);
        let oracle = DistBackend::default_for_test(2);
        assert!(!test_inequality(&f, 0.0, &form, 2.0, &sampler, &oracle).unwrap().is_empty());
        assert!(test_inequality(&f, 0.0, &form, 1.0, &sampler, &oracle).unwrap().is_empty());
        // the worked point: LHS 0.75 against 2 * 0.5
        assert!(form.lhs(0.5, 0.5) < 2.0 * 0.5);
    }

    #[test]
    fn ratio_identity_and_exact_minimum() {
        let f = compiled("x*(x*y - 1)", &["x", "y"]);
        let form = LojaForm::mixed(1.0 / 18.0).unwrap();
        let fit = fit_constants(&f, 0.0, &form, &annulus(1.0, 10.0, 150, 11), &DistBackend::default_for_fit(2)).unwrap();
        assert_eq!(fit.dist_source, DistSource::Oracle);
        let mut brute = f64::INFINITY;
        for s in &fit.samples {
            let x = s.point.coords();
            let gap = (f.value(x).unwrap() - 0.0).abs();
            let lhs = gap.powf(1.0 / 18.0) + norm(x) * gap;
            assert_eq!(s.ratio.to_bits(), (lhs / s.dist).to_bits());
            assert!(s.dist >= FIBER_EXCLUSION * 1e-9);
            brute = brute.min(s.ratio);
        }
        assert_eq!(fit.c_star.to_bits(), brute.to_bits());
        assert!(fit.c_star > 0.0);
        assert!(fit.samples.iter().any(|s| s.point == fit.witness && s.ratio == fit.c_star));
    }

    #[test]
    fn near_fiber_samples_are_excluded() {
        // every sample sits on the fiber x1 = 0
        let f = compiled("x1", &["x1", "x2"]);
        let form = LojaForm::mixed(1.0).unwrap();
        let sampler = SamplerSpec { region: Region::Box { lo: vec![0.0, -1.0], hi: vec![0.0, 1.0] }, count: 100, seed: 0 };
        assert!(matches!(fit_constants(&f, 0.0, &form, &sampler, &projection()), Err(LojaError::AllNearFiber)));
    }

    #[test]
    fn flat_valley_does_not_inflate_projection_distances() {
        // along (1/s, s, s) the nearest fiber point is (1/s, s, 0), at distance
        // s; the valley x = 1/y holds far points with |f| below 1e-9
        let f = compiled("z*(x^4 + (x*y - 1)^2)", &["x", "y", "z"]);
        let curve = Curve::parse(&["1/s", "s", "s"], 1.0).unwrap();
        let sampler = SamplerSpec { region: Region::Curve { curve, s_min: 10.0, s_max: 100.0 }, count: 100, seed: 0 };
        let fit = fit_constants(&f, 0.0, &LojaForm::mixed(0.5).unwrap(), &sampler, &projection()).unwrap();
        for s in &fit.samples {
            let z = s.point.coords()[2];
            assert!((s.dist - z).abs() <= 1e-6 * z, "dist {} at s = {z}", s.dist);
        }
        // LHS = s^-3/2 + sqrt(2) s^-2 (up to O(s^-4)), smallest at s = 100
        let expected = (1e-3 + 2f64.sqrt() * 1e-4) / 100.0;
        assert!((fit.c_star / expected - 1.0).abs() < 1e-3, "{}", fit.c_star);
    }

    #[test]
    fn beta_monotone_on_far_samples() {
        let f = compiled("x/sqrt(y^2 + 1)", &["x", "y"]);
        // a thin band around the level 2 keeps |f - t| <= 1
        let mut pts = Vec::new();
        let c = Curve::parse(&["2*sqrt(s^2 + 1) + 0.5", "s"], 1.0).unwrap();
        for k in 0..100 {
            pts.push(c.eval(1.0 + k as f64).unwrap().into_vec());
        }
        let one = LojaForm::new(FormKind::Mixed, 1.0, 1.0).unwrap();
        let less = LojaForm::new(FormKind::Mixed, 1.0, 0.9).unwrap();
        let a = evaluate(&f, 2.0, &one, pts.clone(), &projection()).unwrap();
        let b = evaluate(&f, 2.0, &less, pts, &projection()).unwrap();
        let min = |e: &Evaluated| e.used.iter().map(|s| s.ratio).fold(f64::INFINITY, f64::min);
        assert!(min(&a) >= min(&b));
    }

    #[test]
    fn guards() {
        let f = compiled("x1", &["x1", "x2"]);
        let form = LojaForm::mixed(1.0).unwrap();
        assert!(matches!(
            fit_constants(&f, 0.0, &form, &annulus(0.0, 1.0, 10, 0), &projection()),
            Err(LojaError::TooFewSamples { .. })
        ));
        assert!(matches!(
            test_inequality(&f, 0.0, &form, 0.0, &annulus(0.0, 1.0, 100, 0), &projection()),
            Err(LojaError::BadConstant)
        ));
    }

    #[test]
    fn report_shape() {
        let f = compiled("x1", &["x1", "x2"]);
        let form = LojaForm::mixed(1.0).unwrap();
        let fit = fit_constants(&f, 0.0, &form, &annulus(0.5, 1.0, 100, 1), &projection()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fit_report_json("linear", &fit).unwrap()).unwrap();
        for key in ["function_id", "t", "form", "c_star", "witness", "samples_used", "dist_source", "seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["form"]["kind"], "mixed");
        assert_eq!(v["dist_source"], "projection");
    }
}
