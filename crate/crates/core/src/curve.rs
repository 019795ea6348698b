//! Parameterized curves `s -> X(s)`, power-law fits of scalar quantities along
//! them, and asymptotic-critical-value witness checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{norm, parse, CompiledFn, DomainError, Expr, ExprError, Point, Vars};

/// Exponents within this band around zero count as "no trend".
pub const PLATEAU_BAND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("curve component {index}: {source}")]
    Component { index: usize, source: ExprError },
    #[error("curve components must be univariate in `s`")]
    NotUnivariate,
    #[error("s_min must be positive, got {0}")]
    BadStart(f64),
    #[error("parameter {s} below s_min = {s_min}")]
    BeforeStart { s: f64, s_min: f64 },
    #[error("domain error at s = {s}: {source}")]
    Domain { s: f64, source: DomainError },
    #[error("curve has arity {curve}, function has arity {function}")]
    ArityMismatch { curve: usize, function: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample {index} is not strictly positive ({value})")]
    NonPositiveSample { index: usize, value: f64 },
    #[error("degenerate grid: {0}")]
    DegenerateGrid(&'static str),
}

/// Vector of univariate expressions in `s`, defined for `s >= s_min`.
#[derive(Debug, Clone)]
pub struct Curve {
    components: Vec<Expr>,
    s_min: f64,
}

impl Curve {
    pub fn new(components: Vec<Expr>, s_min: f64) -> Result<Self, CurveError> {
        if components.iter().any(|c| c.arity() != 1) {
            return Err(CurveError::NotUnivariate);
        }
        if !(s_min > 0.0 && s_min.is_finite()) {
            return Err(CurveError::BadStart(s_min));
        }
        Ok(Curve { components, s_min })
    }

    /// Parses component strings in the variable `s`.
    pub fn parse<S: AsRef<str>>(components: &[S], s_min: f64) -> Result<Self, CurveError> {
        let vars = Vars::named(["s"]);
        let parsed = components
            .iter()
            .enumerate()
            .map(|(index, text)| parse(text.as_ref(), &vars).map_err(|source| CurveError::Component { index, source }))
            .collect::<Result<Vec<_>, _>>()?;
        Curve::new(parsed, s_min)
    }

    pub fn arity(&self) -> usize {
        self.components.len()
    }

    pub fn s_min(&self) -> f64 {
        self.s_min
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Component expressions printed in the variable `s`.
    pub fn component_strings(&self) -> Vec<String> {
        let vars = Vars::named(["s"]);
        self.components.iter().map(|c| c.display(&vars).to_string()).collect()
    }

    pub fn eval(&self, s: f64) -> Result<Point, CurveError> {
        if s < self.s_min {
            return Err(CurveError::BeforeStart { s, s_min: self.s_min });
        }
        let coords = self
            .components
            .iter()
            .map(|c| c.eval(&[s]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| CurveError::Domain { s, source })?;
        Point::new(coords).map_err(|source| CurveError::Domain { s, source })
    }
}

/// Geometric grid of curve parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SGrid {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl Default for SGrid {
    fn default() -> Self {
        SGrid { start: 10.0, end: 1e4, points: 25 }
    }
}

impl SGrid {
    pub fn new(start: f64, end: f64, points: usize) -> Self {
        SGrid { start, end, points }
    }

    pub fn values(&self) -> Vec<f64> {
        geometric(self.start, self.end, self.points)
    }
}

pub(crate) fn geometric(start: f64, end: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let ratio = (end / start).ln() / (points - 1) as f64;
            (0..points)
                .map(|i| if i + 1 == points { end } else { start * (ratio * i as f64).exp() })
                .collect()
        }
    }
}

/// `g(s) ~ coefficient * s^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub exponent: f64,
    pub coefficient: f64,
    /// Largest absolute log-log residual over the fit window.
    pub fit_residual: f64,
}

impl PowerLaw {
    pub fn decays(&self) -> bool {
        self.exponent < -PLATEAU_BAND
    }

    pub fn is_plateau(&self) -> bool {
        self.exponent.abs() < PLATEAU_BAND
    }
}

/// Least-squares line through `(ln s, ln g)` on the upper half of the
/// samples.
///
/// Requires at least 8 strictly positive samples on an increasing grid
/// spanning a factor of at least 2.
pub fn asymptotic_order(s: &[f64], g: &[f64]) -> Result<PowerLaw, CurveError> {
    const MIN_SAMPLES: usize = 8;
    if s.len() != g.len() {
        return Err(CurveError::DegenerateGrid("parameter and sample lengths differ"));
    }
    if s.len() < MIN_SAMPLES {
        return Err(CurveError::TooFewSamples { needed: MIN_SAMPLES, got: s.len() });
    }
    fit_upper_half(s, g)
}

/// Same fit without the sample-count floor; used on short sweep schedules.
pub(crate) fn fit_upper_half(s: &[f64], g: &[f64]) -> Result<PowerLaw, CurveError> {
    if s.len() < 4 {
        return Err(CurveError::TooFewSamples { needed: 4, got: s.len() });
    }
    if s.windows(2).any(|w| !(w[1] > w[0])) || s[0] <= 0.0 {
        return Err(CurveError::DegenerateGrid("parameters must be positive and strictly increasing"));
    }
    if s[s.len() - 1] / s[0] < 2.0 {
        return Err(CurveError::DegenerateGrid("grid spans less than a factor of 2"));
    }
    if let Some((index, &value)) = g.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(CurveError::NonPositiveSample { index, value });
    }
    let from = s.len() - s.len() / 2;
    let xs: Vec<f64> = s[from..].iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = g[from..].iter().map(|v| v.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    let fit_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0, f64::max);
    Ok(PowerLaw { exponent: slope, coefficient: intercept.exp(), fit_residual })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// `||x|| ||grad f(x)|| -> 0`
    #[serde(rename = "K")]
    K,
    /// `||grad f(x)|| -> 0`
    #[serde(rename = "K~")]
    KTilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessSample {
    pub s: f64,
    pub norm: f64,
    pub f_value: f64,
    pub monitored: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessReport {
    pub variant: Variant,
    pub t: f64,
    pub epsilon: f64,
    pub norm_diverges: bool,
    pub norm_law: PowerLaw,
    pub f_limit: f64,
    /// Difference of the last two samples of `f` was below `epsilon / 10`.
    pub f_limit_stable: bool,
    /// Law of `|f(X(s)) - t|`; absent when the gap vanishes identically.
    pub gap_law: Option<PowerLaw>,
    /// Law of the monitored quantity; absent when it vanishes identically.
    pub monitored_law: Option<PowerLaw>,
    pub monitored_last: f64,
    pub verdict: Verdict,
    #[serde(skip)]
    pub samples: Vec<WitnessSample>,
}

impl WitnessReport {
    /// Re-derives the verdict from the stored quantities at another
    /// threshold.
    pub fn verdict_at(&self, epsilon: f64) -> Verdict {
        let stable = self.samples.len() >= 2 && {
            let k = self.samples.len();
            (self.samples[k - 1].f_value - self.samples[k - 2].f_value).abs() < epsilon / 10.0
        };
        if self.norm_diverges && stable && (self.f_limit - self.t).abs() <= epsilon && self.monitored_last <= epsilon {
            Verdict::Accept
        } else {
            Verdict::Reject
        }
    }
}

/// Samples `f` along the curve and checks the three defining conditions of an
/// asymptotic critical value: the curve escapes, `f` tends to `t`, and the
/// monitored quantity tends to zero.
pub fn kinf_witness_check(
    f: &CompiledFn,
    curve: &Curve,
    grid: &SGrid,
    t: f64,
    variant: Variant,
    epsilon: f64,
) -> Result<WitnessReport, CurveError> {
    if curve.arity() != f.arity() {
        return Err(CurveError::ArityMismatch { curve: curve.arity(), function: f.arity() });
    }
    let s_values = grid.values();
    let mut samples = Vec::with_capacity(s_values.len());
    let mut grad = vec![0.0; f.arity()];
    for &s in &s_values {
        let x = curve.eval(s)?;
        let value = f.value_grad(x.coords(), &mut grad).map_err(|source| CurveError::Domain { s, source })?;
        let gnorm = norm(&grad);
        let xnorm = x.norm();
        let monitored = match variant {
            Variant::K => xnorm * gnorm,
            Variant::KTilde => gnorm,
        };
        samples.push(WitnessSample { s, norm: xnorm, f_value: value, monitored });
    }
    let norms: Vec<f64> = samples.iter().map(|w| w.norm).collect();
    let norm_law = fit_upper_half(&s_values, &norms)?;
    let norm_diverges = norm_law.exponent > PLATEAU_BAND && norms[norms.len() - 1] > norms[0];
    let gaps: Vec<f64> = samples.iter().map(|w| (w.f_value - t).abs()).collect();
    let gap_law = fit_upper_half(&s_values, &gaps).ok();
    let monitored: Vec<f64> = samples.iter().map(|w| w.monitored).collect();
    let monitored_law = fit_upper_half(&s_values, &monitored).ok();
    let last = samples.len() - 1;
    let mut report = WitnessReport {
        variant,
        t,
        epsilon,
        norm_diverges,
        norm_law,
        f_limit: samples[last].f_value,
        f_limit_stable: (samples[last].f_value - samples[last - 1].f_value).abs() < epsilon / 10.0,
        gap_law,
        monitored_law,
        monitored_last: samples[last].monitored,
        verdict: Verdict::Reject,
        samples,
    };
    report.verdict = report.verdict_at(epsilon);
    Ok(report)
}
