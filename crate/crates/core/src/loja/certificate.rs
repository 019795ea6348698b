use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{project_escalating, LojaError, LojaForm};
use crate::curve::{asymptotic_order, fit_upper_half, Curve, CurveError, PowerLaw, SGrid, PLATEAU_BAND};
use crate::expr::{norm, CompiledFn};
use crate::levelset::{dist_oracle_adaptive, AdaptiveOracle, LevelSpec, ProjectionOptions};

/// A decaying ratio counts as a failure once it is this small at the end of
/// the grid.
pub const FAIL_RATIO: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateOptions {
    pub grid: SGrid,
    pub projection: ProjectionOptions,
    pub oracle: AdaptiveOracle,
    /// Compare projection with the grid oracle at the first, middle and last
    /// grid point (arity <= 3 only).
    pub cross_check: bool,
    /// Fiber tolerance; `None` picks `min(1e-9, 1e-6 * smallest gap)` over
    /// the grid, so no curve point counts as lying on the fiber.
    pub f_tol: Option<f64>,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions {
            grid: SGrid::new(10.0, 1e6, 25),
            projection: ProjectionOptions::default(),
            oracle: AdaptiveOracle::default(),
            cross_check: true,
            f_tol: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub s: f64,
    pub lhs: f64,
    pub dist: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub s: f64,
    pub projection: f64,
    pub oracle: f64,
    pub cell_diagonal: f64,
    /// `|projection - oracle| <= oracle * 1e-2 + cell_diagonal`
    pub agree: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveVerdict {
    Fails,
    HoldsAlongCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCertificate {
    pub form: LojaForm,
    pub t: f64,
    /// Curve components in the variable `s`.
    pub curve: Vec<String>,
    pub ratio_law: PowerLaw,
    pub verdict: CurveVerdict,
    pub trace: Vec<RatioSample>,
    pub cross_checks: Vec<CrossCheck>,
}

impl FailureCertificate {
    /// Ratio at the largest grid parameter.
    pub fn last_ratio(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.ratio)
    }
}

/// Follows `LHS / dist` along `curve` for one form.
pub fn counterexample_certificate(
    f: &CompiledFn,
    t: f64,
    form: &LojaForm,
    curve: &Curve,
    opts: &CertificateOptions,
) -> Result<FailureCertificate, LojaError> {
    let mut v = counterexample_sweep(f, t, std::slice::from_ref(form), curve, opts)?;
    Ok(v.remove(0))
}

/// Same as [`counterexample_certificate`] for several forms, sharing the
/// distance computations.
pub fn counterexample_sweep(
    f: &CompiledFn,
    t: f64,
    forms: &[LojaForm],
    curve: &Curve,
    opts: &CertificateOptions,
) -> Result<Vec<FailureCertificate>, LojaError> {
    if curve.arity() != f.arity() {
        return Err(CurveError::ArityMismatch { curve: curve.arity(), function: f.arity() }.into());
    }
    let s_values = opts.grid.values();
    let points = s_values.iter().map(|&s| Ok(curve.eval(s)?.into_vec())).collect::<Result<Vec<_>, LojaError>>()?;
    let norms: Vec<f64> = points.iter().map(|p| norm(p)).collect();
    let norm_law = fit_upper_half(&s_values, &norms)?;
    if !(norm_law.exponent > PLATEAU_BAND && norms[norms.len() - 1] > norms[0]) {
        return Err(LojaError::CurveNotEscaping);
    }

    let gaps = points.iter().map(|p| Ok((f.value(p)? - t).abs())).collect::<Result<Vec<_>, LojaError>>()?;
    let f_tol = match opts.f_tol {
        Some(tol) => tol,
        None => {
            let smallest = gaps.iter().copied().filter(|g| *g > 0.0).fold(f64::INFINITY, f64::min);
            LevelSpec::DEFAULT_F_TOL.min(1e-6 * smallest)
        }
    };
    let level = LevelSpec::new(f, t, f_tol)?;
    let dists: Vec<Option<f64>> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| project_escalating(&level, x, &opts.projection, i as u64))
        .collect::<Result<_, _>>()?;
    let failed = dists.iter().filter(|d| d.is_none()).count();
    if failed > 0 {
        return Err(LojaError::Inconclusive { failed, total: dists.len() });
    }
    let dists: Vec<f64> = dists.into_iter().flatten().collect();

    let mut cross_checks = Vec::new();
    if opts.cross_check && f.arity() <= 3 {
        let last = s_values.len() - 1;
        let mut picks = vec![0, last / 2, last];
        picks.dedup();
        for i in picks {
            let o = dist_oracle_adaptive(&level, &points[i], &opts.oracle)?;
            cross_checks.push(CrossCheck {
                s: s_values[i],
                projection: dists[i],
                oracle: o.dist,
                cell_diagonal: o.cell_diagonal,
                agree: (dists[i] - o.dist).abs() <= o.dist * 1e-2 + o.cell_diagonal,
            });
        }
    }

    forms
        .iter()
        .map(|form| {
            let trace: Vec<RatioSample> = s_values
                .iter()
                .zip(&gaps)
                .zip(norms.iter().zip(&dists))
                .map(|((&s, &gap), (&r, &dist))| {
                    let lhs = form.lhs(gap, r);
                    RatioSample { s, lhs, dist, ratio: lhs / dist }
                })
                .collect();
            let ratios: Vec<f64> = trace.iter().map(|r| r.ratio).collect();
            let ratio_law = asymptotic_order(&s_values, &ratios)?;
            let verdict = if ratio_law.exponent < -PLATEAU_BAND && ratios[ratios.len() - 1] < FAIL_RATIO {
                CurveVerdict::Fails
            } else {
                CurveVerdict::HoldsAlongCurve
            };
            Ok(FailureCertificate {
                form: *form,
                t,
                curve: curve.component_strings(),
                ratio_law,
                verdict,
                trace,
                cross_checks: cross_checks.clone(),
            })
        })
        .collect()
}

/// CSV with columns `s, lhs, dist, ratio`.
pub fn write_ratio_csv<W: Write>(out: W, cert: &FailureCertificate) -> Result<(), LojaError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s", "lhs", "dist", "ratio"])?;
    for r in &cert.trace {
        w.serialize((r.s, r.lhs, r.dist, r.ratio))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
