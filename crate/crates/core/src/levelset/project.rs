use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dist, LevelSetError, LevelSpec, EMPTY_FIBER_DISTANCE};
use crate::expr::{norm, Point};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOptions {
    pub starts: usize,
    /// Inner iterations per penalty stage.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions { starts: 8, max_iters: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub y: Point,
    pub dist_upper: f64,
    pub feasible: bool,
    pub empty_fiber_presumed: bool,
    pub starts_used: usize,
}

const PERTURBATION_SCALES: [f64; 3] = [0.1, 1.0, 10.0];
const RHO_STAGES: [f64; 9] = [1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8];
const POLISH_ITERS: usize = 50;
const RESTORE_ITERS: usize = 100;
const SCAN_BUDGET: f64 = 40_000.0;

/// Outcome of one start.
struct Run {
    y: Vec<f64>,
    feasible: bool,
    min_residual: Residuals,
}

/// Smallest `|f - t|` seen, and which signs of `f - t` occurred.
#[derive(Debug, Clone, Copy)]
struct Residuals {
    min_abs: f64,
    positive: bool,
    negative: bool,
}

impl Default for Residuals {
    fn default() -> Self {
        Residuals { min_abs: f64::INFINITY, positive: false, negative: false }
    }
}

impl Residuals {
    fn see(&mut self, r: f64) {
        self.min_abs = self.min_abs.min(r.abs());
        self.positive |= r > 0.0;
        self.negative |= r < 0.0;
    }

    fn merge(&mut self, other: &Residuals) {
        self.min_abs = self.min_abs.min(other.min_abs);
        self.positive |= other.positive;
        self.negative |= other.negative;
    }
}

/// Nearest point of `{f = t}` to `x` found by penalty continuation from
/// several starts.
pub fn project_to_levelset(
    level: &LevelSpec<'_>,
    x: &[f64],
    opts: &ProjectionOptions,
) -> Result<ProjectionResult, LevelSetError> {
    if opts.starts == 0 {
        return Err(LevelSetError::InvalidArgument("starts must be >= 1"));
    }
    if x.len() != level.arity() {
        return Err(LevelSetError::InvalidArgument("query point dimension differs from arity"));
    }
    let starts = start_points(x, opts);
    let runs: Vec<Option<Run>> =
        starts.par_iter().map(|y0| run_start(level, x, y0, opts.max_iters)).collect();

    let mut best: Option<(f64, f64, &[f64])> = None;
    let mut seen = Residuals::default();
    for run in runs.iter().flatten() {
        seen.merge(&run.min_residual);
        if !run.feasible {
            continue;
        }
        let d = dist(&run.y, x);
        let key = (d, norm(&run.y), run.y.as_slice());
        let better = match best {
            None => true,
            Some(b) => {
                d < b.0 || (d == b.0 && (key.1 < b.1 || (key.1 == b.1 && lex_less(key.2, b.2))))
            }
        };
        if better {
            best = Some(key);
        }
    }

    if let Some((d, _, y)) = best {
        return Ok(ProjectionResult {
            y: Point(y.to_vec()),
            dist_upper: d,
            feasible: true,
            empty_fiber_presumed: false,
            starts_used: opts.starts,
        });
    }

    // No start reached the fiber. Presume it empty when the residual stays
    // away from zero everywhere we looked, or when it never changes sign and
    // never came within 1e3 * f_tol (an attained zero of even multiplicity is
    // reached by the restoration steps, so what is left is a positive
    // infimum, possibly approached only at infinity).
    seen.merge(&coarse_scan(level, x));
    let bounded_away = seen.min_abs >= (1e3 * level.f_tol).max(1e-3);
    let one_signed = !(seen.positive && seen.negative) && seen.min_abs >= 1e3 * level.f_tol;
    if bounded_away || one_signed {
        Ok(ProjectionResult {
            y: Point(x.to_vec()),
            dist_upper: EMPTY_FIBER_DISTANCE,
            feasible: false,
            empty_fiber_presumed: true,
            starts_used: opts.starts,
        })
    } else {
        Err(LevelSetError::Inconclusive { min_residual: seen.min_abs })
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (p, q) in a.iter().zip(b) {
        if p != q {
            return p < q;
        }
    }
    false
}

fn start_points(x: &[f64], opts: &ProjectionOptions) -> Vec<Vec<f64>> {
    let n = x.len();
    let base = 1.0 + norm(x);
    let mut out = vec![x.to_vec()];
    for k in 1..opts.starts {
        let mut r = rng::stream(opts.seed, k as u64);
        let mut dir: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let len = norm(&dir).max(f64::MIN_POSITIVE);
        let scale = PERTURBATION_SCALES[(k - 1) % PERTURBATION_SCALES.len()] * base;
        for (d, xi) in dir.iter_mut().zip(x) {
            *d = xi + scale * *d / len;
        }
        out.push(dir);
    }
    out
}

/// Penalty objective `|y - x|^2 + rho*((f(y) - t)/sigma)^2`, `None` off the
/// domain.
fn penalty(level: &LevelSpec<'_>, x: &[f64], y: &[f64], rho_s: f64) -> Option<(f64, f64)> {
    let r = level.residual(y).ok()?;
    let d2: f64 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    Some((d2 + rho_s * r * r, r))
}

fn run_start(level: &LevelSpec<'_>, x: &[f64], y0: &[f64], max_iters: usize) -> Option<Run> {
    let mut min_residual = Residuals::default();
    min_residual.see(level.residual(y0).ok()?);
    let mut best: Option<Vec<f64>> = None;
    let offer = |y: Vec<f64>, best: &mut Option<Vec<f64>>| {
        if !is_feasible(level, &y) {
            return;
        }
        let better = match best {
            None => true,
            Some(b) => dist(&y, x) < dist(b, x),
        };
        if better {
            *best = Some(y);
        }
    };

    // Penalty continuation from y0.
    let mut y = continuation(level, x, y0, max_iters, &mut min_residual);
    polish(level, x, &mut y, &mut min_residual);
    if is_feasible(level, &y) {
        slide(level, x, &mut y, max_iters, &mut min_residual);
    }
    let fallback = y.clone();
    offer(y, &mut best);

    // Continuation pulls every start back towards x first, which can trap
    // them all in one basin. Restoring feasibility near y0 and sliding along
    // the level set keeps the starts apart.
    if let Some(mut z) = restore(level, y0, &mut min_residual) {
        slide(level, x, &mut z, max_iters, &mut min_residual);
        offer(z, &mut best);
    }

    let feasible = best.is_some();
    Some(Run { y: best.unwrap_or(fallback), feasible, min_residual })
}

fn is_feasible(level: &LevelSpec<'_>, y: &[f64]) -> bool {
    level.residual(y).map(|r| r.abs() <= level.f_tol).unwrap_or(false)
}

fn continuation(level: &LevelSpec<'_>, x: &[f64], y0: &[f64], max_iters: usize, min_residual: &mut Residuals) -> Vec<f64> {
    let n = x.len();
    let mut y = y0.to_vec();
    let mut g = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut sigma = 1.0;
    for &rho in &RHO_STAGES {
        // The residual is measured in units of the local gradient so that
        // flat functions still get a strong enough penalty.
        if level.f.value_grad(&y, &mut g).is_err() {
            break;
        }
        let gn = norm(&g);
        if gn > 0.0 && gn.is_finite() {
            sigma = gn.min(1.0);
        }
        let rho_s = rho / (sigma * sigma);
        for _ in 0..max_iters {
            let r = match level.f.value_grad(&y, &mut g) {
                Ok(v) => v - level.t,
                Err(_) => break,
            };
            min_residual.see(r);
            // Gauss-Newton step for J = [I; sqrt(rho_s) grad^T].
            let grad_p: Vec<f64> = (0..n).map(|i| (y[i] - x[i]) + rho_s * r * g[i]).collect();
            let gg: f64 = g.iter().map(|v| v * v).sum();
            let gdot: f64 = g.iter().zip(&grad_p).map(|(a, b)| a * b).sum();
            let coef = rho_s * gdot / (1.0 + rho_s * gg);
            for i in 0..n {
                dir[i] = -(grad_p[i] - coef * g[i]);
            }
            let slope: f64 = 2.0 * grad_p.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>();
            if !(slope < 0.0) || norm(&dir) <= 1e-15 * (1.0 + norm(&y)) {
                break;
            }
            let p0 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + rho_s * r * r;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                for i in 0..n {
                    trial[i] = y[i] + alpha * dir[i];
                }
                if let Some((p, rt)) = penalty(level, x, &trial, rho_s) {
                    min_residual.see(rt);
                    if p <= p0 + 1e-4 * alpha * slope {
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            let moved = alpha * norm(&dir);
            y.copy_from_slice(&trial);
            if moved <= 1e-14 * (1.0 + norm(&y)) {
                break;
            }
        }
    }
    y
}

/// Newton iteration on `f - t` alone, started at `y0`. Returns a feasible
/// point or `None`.
fn restore(level: &LevelSpec<'_>, y0: &[f64], min_residual: &mut Residuals) -> Option<Vec<f64>> {
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut g = vec![0.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..RESTORE_ITERS {
        let r = level.f.value_grad(&y, &mut g).ok()? - level.t;
        min_residual.see(r);
        if r.abs() <= 0.25 * level.f_tol {
            return Some(y);
        }
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if !(gg > 0.0) {
            return None;
        }
        let mut beta = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                z[i] = y[i] - beta * r * g[i] / gg;
            }
            if let Ok(rz) = level.residual(&z) {
                if rz.abs() < r.abs() {
                    min_residual.see(rz);
                    accepted = true;
                    break;
                }
            }
            beta *= 0.5;
        }
        if !accepted {
            break;
        }
        y.copy_from_slice(&z);
    }
    is_feasible(level, &y).then_some(y)
}

/// Moves a feasible `y` towards `x` along the level set: a step in the tangent
/// direction followed by [`restore`], accepted when it brings `y` closer.
fn slide(level: &LevelSpec<'_>, x: &[f64], y: &mut Vec<f64>, max_iters: usize, min_residual: &mut Residuals) {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut alpha: f64 = 1.0;
    for _ in 0..max_iters {
        if level.f.value_grad(y, &mut g).is_err() {
            return;
        }
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if !(gg > 0.0) {
            return;
        }
        let to_x: Vec<f64> = (0..n).map(|i| x[i] - y[i]).collect();
        let along = g.iter().zip(&to_x).map(|(a, b)| a * b).sum::<f64>() / gg;
        let d: Vec<f64> = (0..n).map(|i| to_x[i] - along * g[i]).collect();
        let d_len = norm(&d);
        let here = norm(&to_x);
        if d_len <= 1e-12 * (1.0 + here) {
            return;
        }
        let mut a = (2.0 * alpha).min(1.0);
        let mut moved = false;
        for _ in 0..50 {
            let trial: Vec<f64> = (0..n).map(|i| y[i] + a * d[i]).collect();
            if let Some(z) = restore(level, &trial, min_residual) {
                if dist(&z, x) < here {
                    *y = z;
                    moved = true;
                    break;
                }
            }
            a *= 0.5;
        }
        if !moved {
            return;
        }
        alpha = a;
        if a * d_len <= 1e-13 * (1.0 + here) {
            return;
        }
    }
}

/// Newton steps onto the linearized constraint, each closest to `x`. Only
/// accepted while they shrink the residual.
fn polish(level: &LevelSpec<'_>, x: &[f64], y: &mut [f64], min_residual: &mut Residuals) {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..POLISH_ITERS {
        let r = match level.f.value_grad(y, &mut g) {
            Ok(v) => v - level.t,
            Err(_) => return,
        };
        if r == 0.0 {
            return;
        }
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if !(gg > 0.0) {
            return;
        }
        // closest point to x on the linearized level set at y
        let gyx: f64 = (0..n).map(|i| g[i] * (y[i] - x[i])).sum();
        let lam = (gyx - r) / gg;
        for i in 0..n {
            next[i] = x[i] + lam * g[i];
        }
        // fall back to a plain Newton step from y
        let rn = match level.residual(&next) {
            Ok(v) => v,
            Err(_) => return,
        };
        if rn.abs() < r.abs() {
            min_residual.see(rn);
            y.copy_from_slice(&next);
        } else {
            let step = -r / gg;
            for i in 0..n {
                next[i] = y[i] + step * g[i];
            }
            match level.residual(&next) {
                Ok(v) if v.abs() < r.abs() => {
                    min_residual.see(v);
                    y.copy_from_slice(&next);
                }
                _ => return,
            }
        }
        if level.residual(y).map(|v| v.abs() <= 0.25 * level.f_tol).unwrap_or(false) {
            return;
        }
    }
}

/// Smallest `|f - t|` over a coarse grid on a box around `x`.
fn coarse_scan(level: &LevelSpec<'_>, x: &[f64]) -> Residuals {
    let n = x.len();
    let half = 10.0 * (1.0 + norm(x));
    let per_axis = (SCAN_BUDGET.powf(1.0 / n as f64).floor() as usize).max(3);
    let total = per_axis.pow(n as u32);
    let mut y = vec![0.0; n];
    let mut seen = Residuals::default();
    for k in 0..total {
        let mut idx = k;
        for i in 0..n {
            let j = idx % per_axis;
            idx /= per_axis;
            y[i] = x[i] - half + 2.0 * half * j as f64 / (per_axis - 1) as f64;
        }
        if let Ok(r) = level.residual(&y) {
            seen.see(r);
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, CompiledFn, Vars};

    fn compiled(text: &str, vars: &[&str]) -> CompiledFn {
        CompiledFn::new(&parse(text, &Vars::named(vars.iter().copied())).unwrap())
    }

    #[test]
    fn hyperplane_distance() {
        let f = compiled("x1", &["x1", "x2"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let p = project_to_levelset(&level, &[3.0, 4.0], &ProjectionOptions::default()).unwrap();
        assert!(p.feasible);
        assert!((p.dist_upper - 3.0).abs() < 1e-9, "{}", p.dist_upper);
    }

    #[test]
    fn e3_point_is_at_height_distance() {
        let f = compiled("z*(x^4 + (x*y - 1)^2)", &["x", "y", "z"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let p = project_to_levelset(&level, &[0.1, 10.0, 10.0], &ProjectionOptions::default()).unwrap();
        assert!(p.feasible);
        assert!((p.dist_upper - 10.0).abs() < 1e-6, "{}", p.dist_upper);
    }

    #[test]
    fn positive_definite_fiber_is_empty() {
        let f = compiled("x^2 + y^2 + 1", &["x", "y"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        for x in [[0.0, 0.0], [5.0, -3.0], [1e3, 2.0]] {
            let p = project_to_levelset(&level, &x, &ProjectionOptions::default()).unwrap();
            assert!(p.empty_fiber_presumed && !p.feasible);
            assert_eq!(p.dist_upper, 1.0);
        }
    }

    #[test]
    fn infimum_at_infinity_counts_as_empty() {
        // positive everywhere, tends to 0 along (1/y, y)
        let f = compiled("(x*y - 1)^2 + x^2", &["x", "y"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let p = project_to_levelset(&level, &[-2.284, -2.219], &ProjectionOptions::default()).unwrap();
        assert!(p.empty_fiber_presumed);
        assert_eq!(p.dist_upper, 1.0);
    }

    #[test]
    fn positive_minimum_counts_as_empty_unless_near_tolerance() {
        let f = compiled("x^2 + y^2 + 1/100000", &["x", "y"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let p = project_to_levelset(&level, &[1.0, 1.0], &ProjectionOptions::default()).unwrap();
        assert!(p.empty_fiber_presumed);
        // a minimum of 1e-7 is within 1e3 * f_tol
        let g = compiled("x^2 + y^2 + 1/10000000", &["x", "y"]);
        let level = LevelSpec::with_default_tol(&g, 0.0);
        let r = project_to_levelset(&level, &[1.0, 1.0], &ProjectionOptions::default());
        assert!(matches!(r, Err(LevelSetError::Inconclusive { .. })), "{r:?}");
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let f = compiled("x*(x*y - 1)", &["x", "y"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let opts = ProjectionOptions { seed: 7, ..Default::default() };
        let a = project_to_levelset(&level, &[2.0, 2.0], &opts).unwrap();
        let b = project_to_levelset(&level, &[2.0, 2.0], &opts).unwrap();
        assert_eq!(a.y.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.y.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.dist_upper.to_bits(), b.dist_upper.to_bits());
    }

    #[test]
    fn feasible_result_distance_matches_point() {
        let f = compiled("x/(y^2 + 1)", &["x", "y"]);
        let level = LevelSpec::with_default_tol(&f, 0.5);
        let x = [0.3, -1.2];
        let p = project_to_levelset(&level, &x, &ProjectionOptions::default()).unwrap();
        assert!(p.feasible);
        assert_eq!(p.dist_upper, dist(&p.y.0, &x));
        assert!((f.value(&p.y.0).unwrap() - 0.5).abs() <= level.f_tol);
    }

    #[test]
    fn zero_starts_rejected() {
        let f = compiled("x", &["x"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let opts = ProjectionOptions { starts: 0, ..Default::default() };
        assert!(project_to_levelset(&level, &[1.0], &opts).is_err());
    }
}
