//! Minimization over spheres `||x|| = R` by descent on directions.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{SweepOptions, SweepRecord, SweepStatus, SweepVariant};
use crate::expr::{norm, CompiledFn, Point};
use crate::rng;

/// Stop when `R*|tangent gradient| <= STRICT_TOL * psi`.
const STRICT_TOL: f64 = 1e-9;
const STALL_REL: f64 = 1e-12;
const POLISH_STEPS: usize = 20;
/// Relative slack on the level window left by the finite penalty weight.
pub(super) const WINDOW_SLACK: f64 = 1e-6;

struct Objective<'a> {
    f: &'a CompiledFn,
    t: f64,
    variant: SweepVariant,
    window: Option<f64>,
    window_weight: f64,
}

struct Eval {
    psi: f64,
    grad: Vec<f64>,
    /// Row-major Euclidean Hessian of `psi` (Gauss-Newton for the K
    /// variants, which would otherwise need third derivatives).
    hess: Vec<f64>,
}

impl Objective<'_> {
    /// Smooth surrogate `psi` with derivatives. `psi` is `|grad f|^2` for
    /// the K variants and `(f - t)^2` for fsq, plus the window penalty.
    fn eval(&self, x: &[f64], g: &mut [f64], h: &mut [f64]) -> Option<Eval> {
        let n = x.len();
        let fv = self.f.value_grad_hess(x, g, h).ok()?;
        let mut hess = vec![0.0; n * n];
        let (mut psi, mut grad) = match self.variant {
            SweepVariant::K | SweepVariant::KTilde => {
                let psi: f64 = g.iter().map(|v| v * v).sum();
                let hg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>()).collect();
                for i in 0..n {
                    for j in 0..n {
                        hess[i * n + j] = 2.0 * (0..n).map(|k| h[i * n + k] * h[k * n + j]).sum::<f64>();
                    }
                }
                (psi, hg.iter().map(|v| 2.0 * v).collect::<Vec<_>>())
            }
            SweepVariant::Fsq => {
                let r = fv - self.t;
                for i in 0..n {
                    for j in 0..n {
                        hess[i * n + j] = 2.0 * (g[i] * g[j] + r * h[i * n + j]);
                    }
                }
                (r * r, g.iter().map(|v| 2.0 * r * v).collect::<Vec<_>>())
            }
        };
        if let Some(delta) = self.window {
            let r = fv - self.t;
            let excess = r.abs() - delta;
            if excess > 0.0 {
                let w = self.window_weight;
                let s = r.signum();
                psi += w * excess * excess;
                for i in 0..n {
                    grad[i] += 2.0 * w * excess * s * g[i];
                    for j in 0..n {
                        hess[i * n + j] += 2.0 * w * (g[i] * g[j] + excess * s * h[i * n + j]);
                    }
                }
            }
        }
        if !psi.is_finite() || grad.iter().chain(&hess).any(|v| !v.is_finite()) {
            return None;
        }
        Some(Eval { psi, grad, hess })
    }
}

struct Outcome {
    x: Vec<f64>,
    converged: bool,
}

fn tangent(grad: &[f64], u: &[f64]) -> Vec<f64> {
    let radial: f64 = grad.iter().zip(u).map(|(a, b)| a * b).sum();
    grad.iter().zip(u).map(|(g, ui)| g - radial * ui).collect()
}

fn to_sphere(v: &mut [f64], radius: f64) {
    let len = norm(v);
    for c in v.iter_mut() {
        *c *= radius / len;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Orthonormal basis of the plane orthogonal to the unit vector `u`.
fn tangent_basis(u: &[f64]) -> Vec<Vec<f64>> {
    let n = u.len();
    // skip the coordinate axis most aligned with u
    let skip = (0..n).max_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs())).unwrap_or(0);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n.saturating_sub(1));
    for k in (0..n).filter(|&k| k != skip) {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        for _ in 0..2 {
            let c = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(vi, ui)| *vi -= c * ui);
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= c * bi);
            }
        }
        let len = norm(&v);
        v.iter_mut().for_each(|vi| *vi /= len);
        basis.push(v);
    }
    basis
}

/// Solves `m x = b` for symmetric positive definite `m` (row-major, `k x k`).
fn cholesky_solve(m: &[f64], b: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let s = m[i * k + j] - (0..j).map(|p| l[i * k + p] * l[j * k + p]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        y[i] = (b[i] - (0..i).map(|p| l[i * k + p] * y[p]).sum::<f64>()) / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        x[i] = (y[i] - (i + 1..k).map(|p| l[p * k + i] * x[p]).sum::<f64>()) / l[i * k + i];
    }
    Some(x)
}

/// Newton direction in the tangent space, with a Levenberg shift until the
/// Riemannian Hessian is positive definite.
fn newton_direction(e: &Eval, x: &[f64], radius: f64) -> Option<Vec<f64>> {
    let n = x.len();
    let u: Vec<f64> = x.iter().map(|c| c / radius).collect();
    let basis = tangent_basis(&u);
    let k = basis.len();
    let radial_slope = dot(&e.grad, &u) / radius;
    let mut m = vec![0.0; k * k];
    let mut scale: f64 = 0.0;
    for a in 0..k {
        let hb: Vec<f64> = (0..n).map(|i| (0..n).map(|j| e.hess[i * n + j] * basis[a][j]).sum::<f64>()).collect();
        for b in 0..k {
            m[a * k + b] = dot(&basis[b], &hb) - if a == b { radial_slope } else { 0.0 };
        }
        scale = scale.max(m[a * k + a].abs());
    }
    let rhs: Vec<f64> = basis.iter().map(|b| -dot(&e.grad, b)).collect();
    let mut shift = 0.0;
    for _ in 0..60 {
        let mut ms = m.clone();
        for a in 0..k {
            ms[a * k + a] += shift;
        }
        if let Some(c) = cholesky_solve(&ms, &rhs, k) {
            let d: Vec<f64> = (0..n).map(|i| (0..k).map(|a| c[a] * basis[a][i]).sum()).collect();
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        shift = if shift == 0.0 { 1e-10 * scale.max(f64::MIN_POSITIVE) } else { shift * 10.0 };
    }
    None
}

/// Riemannian Newton descent with Armijo backtracking, retracting by
/// normalization; plain tangent-gradient steps when Newton fails.
fn descend(obj: &Objective<'_>, radius: f64, start: Vec<f64>, max_iters: usize) -> Option<Outcome> {
    let n = start.len();
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n * n];
    let mut x = start;
    let mut cur = obj.eval(&x, &mut g, &mut h)?;
    let mut stalled = 0;

    for _ in 0..max_iters {
        let u: Vec<f64> = x.iter().map(|c| c / radius).collect();
        let gt = tangent(&cur.grad, &u);
        let gt_norm = norm(&gt);
        if cur.psi == 0.0 || radius * gt_norm <= STRICT_TOL * cur.psi {
            return Some(Outcome { x, converged: true });
        }
        let mut dir = newton_direction(&cur, &x, radius)
            .filter(|d| dot(d, &gt) < 0.0)
            .unwrap_or_else(|| gt.iter().map(|v| -v * radius / gt_norm.max(f64::MIN_POSITIVE) * 0.1).collect());
        // never turn by more than about half a radian in one step
        let len = norm(&dir);
        if len > 0.5 * radius {
            dir.iter_mut().for_each(|v| *v *= 0.5 * radius / len);
        }
        let slope = dot(&dir, &gt);

        let mut accepted = None;
        let mut a = 1.0;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + a * di).collect();
            to_sphere(&mut trial, radius);
            if let Some(e) = obj.eval(&trial, &mut g, &mut h) {
                if e.psi <= cur.psi + 1e-4 * a * slope {
                    accepted = Some((trial, e));
                    break;
                }
            }
            a *= 0.5;
        }
        let Some((next, e)) = accepted else {
            // No decrease along a descent direction even for tiny steps:
            // stationary to working precision.
            let x = polish(obj, radius, x, cur);
            return Some(Outcome { x, converged: true });
        };
        // Decreases at the rounding level mean the iterate is as stationary
        // as the arithmetic allows.
        stalled = if cur.psi - e.psi <= STALL_REL * cur.psi { stalled + 1 } else { 0 };
        x = next;
        cur = e;
        if stalled >= 3 {
            let x = polish(obj, radius, x, cur);
            return Some(Outcome { x, converged: true });
        }
    }
    Some(Outcome { x, converged: false })
}

/// Full Newton steps judged by the tangent gradient alone. Once `psi`
/// differences drown in rounding, the gradient is still informative.
fn polish(obj: &Objective<'_>, radius: f64, mut x: Vec<f64>, mut cur: Eval) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n * n];
    let tangent_norm = |x: &[f64], e: &Eval| {
        let u: Vec<f64> = x.iter().map(|c| c / radius).collect();
        norm(&tangent(&e.grad, &u))
    };
    for _ in 0..POLISH_STEPS {
        let Some(d) = newton_direction(&cur, &x, radius) else { break };
        if norm(&d) > 1e-3 * radius {
            break;
        }
        let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + di).collect();
        to_sphere(&mut trial, radius);
        let Some(e) = obj.eval(&trial, &mut g, &mut h) else { break };
        if !(tangent_norm(&trial, &e) < tangent_norm(&x, &cur)) || e.psi > cur.psi * (1.0 + 1e-6) {
            break;
        }
        x = trial;
        cur = e;
    }
    x
}

fn random_direction(seed: u64, stream: u64, n: usize, radius: f64) -> Vec<f64> {
    let mut r = rng::stream(seed, stream);
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        if norm(&v) > 1e-12 {
            to_sphere(&mut v, radius);
            return v;
        }
    }
}

fn record(f: &CompiledFn, t: f64, variant: SweepVariant, radius: f64, x: Vec<f64>, status: SweepStatus) -> Option<SweepRecord> {
    let mut g = vec![0.0; x.len()];
    let fv = f.value_grad(&x, &mut g).ok()?;
    let gn = norm(&g);
    let xn = norm(&x);
    let u: Vec<f64> = x.iter().map(|c| c / xn).collect();
    let alignment_residual = if gn > 0.0 { (norm(&tangent(&g, &u)) / gn).min(1.0) } else { 0.0 };
    let objective = match variant {
        SweepVariant::K => xn * gn,
        SweepVariant::KTilde => gn,
        SweepVariant::Fsq => (fv - t) * (fv - t),
    };
    Some(SweepRecord {
        radius,
        minimizer: Point(x),
        objective,
        f_value: fv,
        product: xn * gn,
        alignment_residual,
        status,
    })
}

pub(super) fn sweep(
    f: &CompiledFn,
    t: f64,
    radii: &[f64],
    window: Option<f64>,
    variant: SweepVariant,
    opts: &SweepOptions,
) -> Vec<SweepRecord> {
    let n = f.arity();
    let tasks: Vec<(usize, usize)> = (0..radii.len()).flat_map(|i| (0..opts.starts).map(move |k| (i, k))).collect();
    let outcomes: Vec<Option<SweepRecord>> = tasks
        .par_iter()
        .map(|&(i, k)| {
            let radius = radii[i];
            let start = random_direction(opts.seed, (i * opts.starts + k) as u64, n, radius);
            let mut g = vec![0.0; n];
            let mut h = vec![0.0; n * n];
            let mut obj = Objective { f, t, variant, window, window_weight: 0.0 };
            let psi0 = obj.eval(&start, &mut g, &mut h)?.psi;
            obj.window_weight = 1e6 * psi0.max(1.0);
            let out = descend(&obj, radius, start, opts.max_iters)?;
            let inside = match window {
                Some(delta) => f.value(&out.x).map(|v| (v - t).abs() <= delta * (1.0 + WINDOW_SLACK)).unwrap_or(false),
                None => true,
            };
            let status = if out.converged && inside { SweepStatus::Converged } else { SweepStatus::Inconclusive };
            record(f, t, variant, radius, out.x, status)
        })
        .collect();

    let mut records = Vec::with_capacity(radii.len());
    for (i, &radius) in radii.iter().enumerate() {
        let runs = &outcomes[i * opts.starts..(i + 1) * opts.starts];
        let chosen = runs.iter().flatten().min_by(|a, b| a.objective.total_cmp(&b.objective)).cloned();
        // Every start left the domain of f: keep the first start point as a
        // placeholder with an infinite objective.
        records.push(chosen.unwrap_or_else(|| SweepRecord {
            radius,
            minimizer: Point(random_direction(opts.seed, (i * opts.starts) as u64, n, radius)),
            objective: f64::INFINITY,
            f_value: f64::NAN,
            product: f64::INFINITY,
            alignment_residual: 1.0,
            status: SweepStatus::Inconclusive,
        }));
    }
    records
}
