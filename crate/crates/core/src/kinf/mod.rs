//! Asymptotic critical values from radius sweeps.
//!
//! [`sweep_min_product`] minimizes `||x|| ||grad f||` (variant K),
//! `||grad f||` (K~) or `(f - t)^2` (fsq) over spheres of growing radius.
//! [`detect_asymptotic_values`] turns decaying sweeps into candidate values
//! and [`malgrange_certificate`] turns non-decaying ones into a lower bound.

mod sphere;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{fit_upper_half, geometric, PowerLaw};
use crate::expr::{CompiledFn, Point};

#[derive(Debug, Error)]
pub enum KinfError {
    #[error("need at least {needed} radii, got {got}")]
    TooFewRadii { needed: usize, got: usize },
    #[error("radii must be positive and strictly increasing")]
    RadiiNotIncreasing,
    #[error("need at least {needed} starts per radius, got {got}")]
    TooFewStarts { needed: usize, got: usize },
    #[error("level window must be positive, got {0}")]
    BadWindow(f64),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepVariant {
    /// `||x|| ||grad f(x)||`
    #[serde(rename = "K")]
    K,
    /// `||grad f(x)||`
    #[serde(rename = "K~")]
    KTilde,
    /// `(f(x) - t)^2`
    #[serde(rename = "fsq")]
    Fsq,
}

impl SweepVariant {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariant::K => "K",
            SweepVariant::KTilde => "K~",
            SweepVariant::Fsq => "fsq",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepStatus {
    Converged,
    Inconclusive,
}

impl SweepStatus {
    pub fn name(self) -> &'static str {
        match self {
            SweepStatus::Converged => "converged",
            SweepStatus::Inconclusive => "inconclusive",
        }
    }
}

/// Best sphere minimizer at one radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub radius: f64,
    pub minimizer: Point,
    /// Minimum of the swept quantity.
    pub objective: f64,
    pub f_value: f64,
    /// `||x|| ||grad f(x)||` at the minimizer, whatever the variant.
    pub product: f64,
    /// Share of `grad f` orthogonal to the radial direction, in `[0, 1]`.
    pub alignment_residual: f64,
    pub status: SweepStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub starts: usize,
    pub seed: u64,
    /// Descent iterations per start.
    pub max_iters: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { starts: 16, seed: 0, max_iters: 3000 }
    }
}

pub const MIN_RADII: usize = 6;
pub const MIN_STARTS: usize = 8;

/// `r0 * factor^k` for `k = 0..count`; the default schedule is
/// `geometric_radii(10.0, 2.0, 10)`.
pub fn geometric_radii(r0: f64, factor: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| r0 * factor.powi(k as i32)).collect()
}

/// Geometric radii from `start` to `end` inclusive.
pub fn radii_between(start: f64, end: f64, count: usize) -> Vec<f64> {
    geometric(start, end, count)
}

/// Minimizes the variant quantity over each sphere `||x|| = R`, optionally
/// restricted to `|f - t| <= window` by a penalty. Returns one record per
/// radius, in radius order.
pub fn sweep_min_product(
    f: &CompiledFn,
    t: f64,
    radii: &[f64],
    window: Option<f64>,
    variant: SweepVariant,
    opts: &SweepOptions,
) -> Result<Vec<SweepRecord>, KinfError> {
    if radii.len() < MIN_RADII {
        return Err(KinfError::TooFewRadii { needed: MIN_RADII, got: radii.len() });
    }
    if radii[0] <= 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(KinfError::RadiiNotIncreasing);
    }
    if opts.starts < MIN_STARTS {
        return Err(KinfError::TooFewStarts { needed: MIN_STARTS, got: opts.starts });
    }
    if let Some(d) = window {
        if !(d > 0.0) {
            return Err(KinfError::BadWindow(d));
        }
    }
    Ok(sphere::sweep(f, t, radii, window, variant, opts))
}

/// Fit of the objective against the radius; `None` when the tail objectives
/// are exactly zero (or otherwise unfit for a log-log fit).
pub fn objective_law(records: &[SweepRecord]) -> Option<PowerLaw> {
    let r: Vec<f64> = records.iter().map(|r| r.radius).collect();
    let o: Vec<f64> = records.iter().map(|r| r.objective).collect();
    fit_upper_half(&r, &o).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub value: f64,
    pub support: Vec<SweepRecord>,
    /// `None` when the objective vanishes exactly at the largest radii.
    pub decay_law: Option<PowerLaw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateValueSet {
    pub variant: SweepVariant,
    pub epsilon: f64,
    pub candidates: Vec<Candidate>,
}

/// Splits concatenated sweeps wherever the radius stops increasing.
fn chains(records: &[SweepRecord]) -> Vec<&[SweepRecord]> {
    let mut out = Vec::new();
    let mut from = 0;
    for i in 1..=records.len() {
        if i == records.len() || !(records[i].radius > records[i - 1].radius) {
            out.push(&records[from..i]);
            from = i;
        }
    }
    out
}

/// Candidate values from one or more sweeps (concatenated in radius order,
/// e.g. several level windows one after the other).
///
/// A sweep qualifies when its objective is below `epsilon` at the two
/// largest radii and decays with exponent below `-0.05` (or vanishes). The
/// f-values at the largest radius of qualifying sweeps are clustered by
/// single linkage with `cluster_tol`.
pub fn detect_asymptotic_values(
    records: &[SweepRecord],
    variant: SweepVariant,
    epsilon: f64,
    cluster_tol: f64,
) -> CandidateValueSet {
    let mut qualified: Vec<(f64, &[SweepRecord], Option<PowerLaw>)> = Vec::new();
    for chain in chains(records) {
        if chain.len() < 2 {
            continue;
        }
        let tail = &chain[chain.len() - 2..];
        if !tail.iter().all(|r| r.objective < epsilon && r.f_value.is_finite()) {
            continue;
        }
        let law = objective_law(chain);
        let decays = match law {
            Some(l) => l.decays(),
            None => tail.iter().all(|r| r.objective == 0.0),
        };
        if decays {
            qualified.push((chain[chain.len() - 1].f_value, chain, law));
        }
    }
    qualified.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut candidates: Vec<Candidate> = Vec::new();
    let mut last_value = f64::NEG_INFINITY;
    for (value, chain, law) in qualified {
        match candidates.last_mut() {
            Some(c) if value - last_value <= cluster_tol => {
                c.support.extend_from_slice(chain);
            }
            _ => candidates.push(Candidate { value, support: chain.to_vec(), decay_law: law }),
        }
        last_value = value;
    }
    CandidateValueSet { variant, epsilon, candidates }
}

/// Lower bound `||x|| ||grad f(x)|| >= c0` for `||x|| >= radius` and
/// `|f - t| <= delta`, read off a K sweep run with that level window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalgrangeCertificate {
    pub t: f64,
    pub c0: f64,
    pub delta: f64,
    pub radius: f64,
    pub valid: bool,
}

/// Objectives may wobble by this factor and still count as stable.
const STABLE_FACTOR: f64 = 0.9;

/// Certificate from a K sweep with window `delta` around `t`. Valid only if
/// every record converged, the objective does not decay, and a stable tail
/// exists; `c0` is half the smallest objective over that tail.
pub fn malgrange_certificate(t: f64, records: &[SweepRecord], delta: f64) -> MalgrangeCertificate {
    let invalid = MalgrangeCertificate { t, c0: 0.0, delta, radius: f64::INFINITY, valid: false };
    if records.is_empty() || records.iter().any(|r| r.status != SweepStatus::Converged) {
        return invalid;
    }
    match objective_law(records) {
        Some(law) if !law.decays() => {}
        _ => return invalid,
    }
    // first index from which the objective never drops below 0.9x its value
    let stable_from = (0..records.len()).find(|&i| {
        let oi = records[i].objective;
        records[i..].iter().all(|r| r.objective >= STABLE_FACTOR * oi)
    });
    let Some(i) = stable_from else { return invalid };
    let min_obj = records[i..].iter().map(|r| r.objective).fold(f64::INFINITY, f64::min);
    if !(min_obj > 0.0 && min_obj.is_finite()) {
        return invalid;
    }
    MalgrangeCertificate { t, c0: 0.5 * min_obj, delta, radius: records[i].radius, valid: true }
}

/// CSV with columns `radius, objective, f_value, product,
/// alignment_residual, status, x1..xn`.
pub fn write_sweep_csv<W: Write>(out: W, records: &[SweepRecord]) -> Result<(), KinfError> {
    let mut w = csv::Writer::from_writer(out);
    let n = records.first().map_or(0, |r| r.minimizer.dim());
    let mut header: Vec<String> =
        ["radius", "objective", "f_value", "product", "alignment_residual", "status"].map(String::from).to_vec();
    header.extend((1..=n).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.radius.to_string(),
            r.objective.to_string(),
            r.f_value.to_string(),
            r.product.to_string(),
            r.alignment_residual.to_string(),
            r.status.name().to_string(),
        ];
        row.extend(r.minimizer.coords().iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct CandidateJson {
    value: f64,
    decay_exponent: Option<f64>,
    radii_support: Vec<f64>,
}

#[derive(Serialize)]
struct CandidateReportJson<'a> {
    variant: &'a str,
    epsilon: f64,
    candidates: Vec<CandidateJson>,
}

/// JSON report `{variant, epsilon, candidates: [{value, decay_exponent,
/// radii_support}]}`.
pub fn candidate_report_json(set: &CandidateValueSet) -> Result<String, KinfError> {
    let report = CandidateReportJson {
        variant: set.variant.name(),
        epsilon: set.epsilon,
        candidates: set
            .candidates
            .iter()
            .map(|c| CandidateJson {
                value: c.value,
                decay_exponent: c.decay_law.map(|l| l.exponent),
                radii_support: c.support.iter().map(|r| r.radius).collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&report)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Vars};

    fn compiled(text: &str, vars: &[&str]) -> CompiledFn {
        CompiledFn::new(&parse(text, &Vars::named(vars.iter().copied())).unwrap())
    }

    fn default_radii() -> Vec<f64> {
        geometric_radii(10.0, 2.0, 10)
    }

    #[test]
    fn e3_sweep_finds_zero() {
        let f = compiled("z*(x^4 + (x*y - 1)^2)", &["x", "y", "z"]);
        let recs = sweep_min_product(&f, 0.0, &default_radii(), None, SweepVariant::K, &SweepOptions::default()).unwrap();
        for r in &recs {
            assert!((r.minimizer.norm() - r.radius).abs() <= 1e-6 * r.radius);
            assert!(r.objective >= 0.0 && (0.0..=1.0).contains(&r.alignment_residual));
        }
        let law = objective_law(&recs).unwrap();
        // On the sphere the minimum sits near z = 0, x ~ 1/R, xy ~ 1, where
        // ||x|| ||grad f|| ~ R * R^-4: faster than the R^-1 along the curve.
        assert!((law.exponent + 3.0).abs() < 0.2, "{law:?}");
        let set = detect_asymptotic_values(&recs, SweepVariant::K, 0.05, 0.05);
        assert_eq!(set.candidates.len(), 1);
        assert!(set.candidates[0].value.abs() <= 0.05);
    }

    #[test]
    fn sqrtslope_has_no_candidates_and_a_certificate() {
        let f = compiled("x/sqrt(y^2 + 1)", &["x", "y"]);
        let radii = default_radii();
        let recs = sweep_min_product(&f, 0.0, &radii, Some(0.5), SweepVariant::K, &SweepOptions::default()).unwrap();
        for r in &recs {
            // oracle: at (0, +-R) the product is R/sqrt(1 + R^2), the sphere minimum
            let bound = r.radius / (1.0 + r.radius * r.radius).sqrt();
            assert!(r.objective >= bound * (1.0 - 1e-9), "{} < {bound}", r.objective);
            assert!(r.objective <= bound * (1.0 + 1e-6), "{} vs {bound}", r.objective);
        }
        assert!(detect_asymptotic_values(&recs, SweepVariant::K, 0.05, 0.05).candidates.is_empty());
        let cert = malgrange_certificate(0.0, &recs, 0.5);
        assert!(cert.valid && cert.c0 >= 0.25, "{cert:?}");
    }

    #[test]
    fn linear_certificate_grows_with_radius() {
        let f = compiled("x1", &["x1", "x2"]);
        let small = sweep_min_product(&f, 0.0, &default_radii(), Some(1.0), SweepVariant::K, &SweepOptions::default())
            .unwrap();
        let big = sweep_min_product(
            &f,
            0.0,
            &geometric_radii(100.0, 2.0, 10),
            Some(1.0),
            SweepVariant::K,
            &SweepOptions::default(),
        )
        .unwrap();
        let (a, b) = (malgrange_certificate(0.0, &small, 1.0), malgrange_certificate(0.0, &big, 1.0));
        assert!(a.valid && b.valid);
        assert!((a.c0 - 5.0).abs() < 1e-9 && (b.c0 - 50.0).abs() < 1e-9, "{a:?} {b:?}");
    }

    #[test]
    fn e3_certificate_is_invalid() {
        let f = compiled("z*(x^4 + (x*y - 1)^2)", &["x", "y", "z"]);
        let recs =
            sweep_min_product(&f, 0.0, &default_radii(), Some(0.5), SweepVariant::K, &SweepOptions::default()).unwrap();
        assert!(!malgrange_certificate(0.0, &recs, 0.5).valid);
    }

    #[test]
    fn emptyinf_fsq_branch() {
        let f = compiled("(x*y - 1)^2 + x^2", &["x", "y"]);
        let recs = sweep_min_product(&f, 0.0, &default_radii(), None, SweepVariant::Fsq, &SweepOptions::default()).unwrap();
        for r in &recs {
            assert_eq!(r.status, SweepStatus::Converged);
            // Below |grad f| ~ 1e-8 the tangential part is dominated by the
            // rounding of x*y - 1.
            let g = f.gradient(r.minimizer.coords()).unwrap();
            if crate::expr::norm(&g) > 1e-8 {
                assert!(r.alignment_residual <= 1e-3, "{r:?}");
            }
            // oracle: f is at most its value at (1/R', R') with R'^2 + R'^-2 = R^2
            let yy = (r.radius * r.radius + (r.radius.powi(4) - 4.0).sqrt()) / 2.0;
            let upper = 1.0 / yy;
            assert!(r.f_value <= upper * (1.0 + 1e-9), "{} > {upper}", r.f_value);
        }
        let law = objective_law(&recs).unwrap();
        assert!(law.exponent <= -1.5, "{law:?}");
        let r: Vec<f64> = recs.iter().map(|r| r.radius).collect();
        let p: Vec<f64> = recs.iter().map(|r| r.product).collect();
        let pl = fit_upper_half(&r, &p).unwrap();
        assert!(pl.exponent <= -1.5, "{pl:?}");
    }

    #[test]
    fn ktilde_windows_on_e1_accept_each_level() {
        let f = compiled("x/(y^2 + 1)", &["x", "y"]);
        let mut all = Vec::new();
        let delta = 0.05;
        for t in [-1.0, 0.0, 1.0] {
            all.extend(
                sweep_min_product(&f, t, &default_radii(), Some(delta), SweepVariant::KTilde, &SweepOptions::default())
                    .unwrap(),
            );
        }
        let set = detect_asymptotic_values(&all, SweepVariant::KTilde, 0.05, 0.05);
        let values: Vec<f64> = set.candidates.iter().map(|c| c.value).collect();
        assert_eq!(values.len(), 3, "{values:?}");
        // |grad f| shrinks as |f| does, so minimizers sit on the window edge
        // nearest zero
        for (v, t) in values.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((v - t).abs() <= delta * (1.0 + 1e-6), "{values:?}");
        }
    }

    #[test]
    fn thresholds_are_monotone() {
        let f = compiled("x/(y^2 + 1)", &["x", "y"]);
        let mut all = Vec::new();
        for t in [-1.0, 0.0, 1.0] {
            all.extend(
                sweep_min_product(&f, t, &default_radii(), Some(0.1), SweepVariant::KTilde, &SweepOptions::default())
                    .unwrap(),
            );
        }
        let mut prev: Option<CandidateValueSet> = None;
        for eps in [1e-6, 1e-4, 1e-2, 1.0, 100.0] {
            let set = detect_asymptotic_values(&all, SweepVariant::KTilde, eps, 0.05);
            if let Some(p) = &prev {
                for c in &p.candidates {
                    assert!(set.candidates.iter().any(|d| c.support.iter().all(|r| d.support.contains(r))));
                }
            }
            prev = Some(set);
        }
    }

    #[test]
    fn sweep_is_deterministic_and_validated() {
        let f = compiled("x*(x*y - 1)", &["x", "y"]);
        let opts = SweepOptions { seed: 3, ..Default::default() };
        let a = sweep_min_product(&f, 0.0, &default_radii(), None, SweepVariant::K, &opts).unwrap();
        let b = sweep_min_product(&f, 0.0, &default_radii(), None, SweepVariant::K, &opts).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            sweep_min_product(&f, 0.0, &default_radii()[..5], None, SweepVariant::K, &opts),
            Err(KinfError::TooFewRadii { .. })
        ));
        let few = SweepOptions { starts: 4, ..opts };
        assert!(matches!(
            sweep_min_product(&f, 0.0, &default_radii(), None, SweepVariant::K, &few),
            Err(KinfError::TooFewStarts { .. })
        ));
    }

    #[test]
    fn csv_and_json_shapes() {
        let f = compiled("x1", &["x1", "x2"]);
        let recs =
            sweep_min_product(&f, 0.0, &default_radii(), None, SweepVariant::K, &SweepOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "radius,objective,f_value,product,alignment_residual,status,x1,x2");
        assert_eq!(lines.count(), recs.len());
        let set = detect_asymptotic_values(&recs, SweepVariant::K, 0.05, 0.05);
        let json: serde_json::Value = serde_json::from_str(&candidate_report_json(&set).unwrap()).unwrap();
        assert_eq!(json["variant"], "K");
        assert!(json["candidates"].as_array().unwrap().is_empty());
    }
}
