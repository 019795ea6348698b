use serde::{Deserialize, Serialize};

use super::{dist, LevelSetError};
use crate::expr::{norm, CompiledFn, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EkelandOptions {
    pub max_iters: usize,
    /// `|f| <= f_tol` counts as reaching the fiber.
    pub f_tol: f64,
    /// Multiplicative slack on the gradient bound `eps/lambda`.
    pub grad_slack: f64,
}

impl Default for EkelandOptions {
    fn default() -> Self {
        EkelandOptions { max_iters: 2000, f_tol: 1e-12, grad_slack: 1e-2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EkelandStatus {
    /// The descent reached `|f| <= f_tol`.
    ReachedFiber,
    /// No further decrease inside the ball.
    Stationary,
    BudgetExhausted,
}

/// Point returned by [`ekeland_descent`] with the three certificates
/// evaluated at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EkelandResult {
    pub x0: Point,
    pub y0: Point,
    pub eps: f64,
    pub lambda: f64,
    pub f_y0: f64,
    pub grad_norm_y0: f64,
    /// `|f(y0)| <= |f(x0)|`
    pub cert_value: bool,
    /// `|x0 - y0| <= lambda*(1 + 1e-9)`
    pub cert_radius: bool,
    /// `|grad f(y0)| <= (eps/lambda)*(1 + grad_slack)`
    pub cert_gradient: bool,
    pub grad_slack: f64,
    pub iterations: usize,
    pub status: EkelandStatus,
}

impl EkelandResult {
    /// Evaluates the certificates at `y0`.
    pub fn certify(
        f: &CompiledFn,
        x0: &[f64],
        y0: &[f64],
        lambda: f64,
        grad_slack: f64,
        iterations: usize,
        status: EkelandStatus,
    ) -> Result<Self, LevelSetError> {
        let eps = f.value(x0)?.abs();
        let mut g = vec![0.0; x0.len()];
        let f_y0 = f.value_grad(y0, &mut g)?;
        let grad_norm_y0 = norm(&g);
        Ok(EkelandResult {
            x0: Point(x0.to_vec()),
            y0: Point(y0.to_vec()),
            eps,
            lambda,
            f_y0,
            grad_norm_y0,
            cert_value: f_y0.abs() <= eps,
            cert_radius: dist(x0, y0) <= lambda * (1.0 + 1e-9),
            cert_gradient: grad_norm_y0 <= (eps / lambda) * (1.0 + grad_slack),
            grad_slack,
            iterations,
            status,
        })
    }

    pub fn success(&self) -> bool {
        self.cert_value && self.cert_radius && self.cert_gradient
    }
}

fn project_ball(x0: &[f64], lambda: f64, z: &mut [f64]) {
    let r = dist(z, x0);
    if r > lambda {
        let k = lambda / r;
        for (zi, ci) in z.iter_mut().zip(x0) {
            *zi = ci + (*zi - ci) * k;
        }
    }
}

/// Projected descent on `|f|` over the closed ball `B(x0, lambda)` with
/// `eps = |f(x0)|`.
///
/// Every iterate satisfies the value and radius certificates. If the final
/// iterate misses the gradient bound (typically after landing on the fiber,
/// where `grad f` need not be small), the last iterate that met it is
/// returned instead; when there is none the result reports failure.
pub fn ekeland_descent(
    f: &CompiledFn,
    x0: &[f64],
    lambda: f64,
    opts: &EkelandOptions,
) -> Result<EkelandResult, LevelSetError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(LevelSetError::InvalidArgument("lambda must be positive"));
    }
    if x0.len() != f.arity() {
        return Err(LevelSetError::InvalidArgument("x0 dimension differs from arity"));
    }
    let n = x0.len();
    let f0 = f.value(x0)?;
    if f0 == 0.0 {
        return Err(LevelSetError::StartOnFiber);
    }
    let bound = (f0.abs() / lambda) * (1.0 + opts.grad_slack);

    let mut y = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut v = f.value_grad(&y, &mut g)?;
    let mut last_good: Option<Vec<f64>> = None;
    let mut alpha = lambda / norm(&g).max(f64::MIN_POSITIVE);
    let mut status = EkelandStatus::BudgetExhausted;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        if norm(&g) <= bound {
            last_good = Some(y.clone());
        }
        if v.abs() <= opts.f_tol {
            status = EkelandStatus::ReachedFiber;
            break;
        }
        iterations += 1;
        let s = v.signum();
        let mut accepted = None;
        let mut a = alpha;
        for _ in 0..80 {
            for i in 0..n {
                z[i] = y[i] - a * s * g[i];
            }
            project_ball(x0, lambda, &mut z);
            if let Ok(fz) = f.value(&z) {
                let decrease: f64 = (0..n).map(|i| s * g[i] * (z[i] - y[i])).sum();
                if fz * v <= 0.0 {
                    // crossed the fiber: locate the zero on the segment
                    accepted = Some(bisect_zero(f, &y, v, &z, fz, opts.f_tol));
                    break;
                }
                if fz.abs() <= v.abs() + 1e-4 * decrease && fz.abs() < v.abs() {
                    accepted = Some(z.clone());
                    break;
                }
            }
            a *= 0.5;
        }
        let Some(next) = accepted else {
            status = EkelandStatus::Stationary;
            break;
        };
        let moved = dist(&next, &y);
        y = next;
        v = f.value_grad(&y, &mut g)?;
        alpha = 2.0 * a;
        if moved <= 1e-15 * (1.0 + norm(&y)) {
            status = EkelandStatus::Stationary;
            if norm(&g) <= bound {
                last_good = Some(y.clone());
            }
            break;
        }
    }
    if iterations == opts.max_iters && norm(&g) <= bound {
        last_good = Some(y.clone());
    }

    let mut result = EkelandResult::certify(f, x0, &y, lambda, opts.grad_slack, iterations, status)?;
    if !result.success() {
        if let Some(p) = last_good {
            result = EkelandResult::certify(f, x0, &p, lambda, opts.grad_slack, iterations, status)?;
        }
    }
    Ok(result)
}

/// Point on `[a, b]` where `f` changes sign, refined by bisection. `f` may be
/// undefined in between, in which case the better endpoint is kept.
fn bisect_zero(f: &CompiledFn, a: &[f64], fa: f64, b: &[f64], fb: f64, f_tol: f64) -> Vec<f64> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (mut flo, mut fhi) = (fa, fb);
    let at = |s: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + s * (q - p)).collect() };
    if fb.abs() <= f_tol || fb == 0.0 {
        return b.to_vec();
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = at(mid);
        let Ok(fm) = f.value(&p) else { break };
        if fm.abs() <= f_tol || fm == 0.0 {
            return p;
        }
        if fm * flo < 0.0 {
            hi = mid;
            fhi = fm;
        } else {
            lo = mid;
            flo = fm;
        }
        if hi - lo <= f64::EPSILON {
            break;
        }
    }
    if flo.abs() <= fhi.abs() {
        at(lo)
    } else {
        at(hi)
    }
}
