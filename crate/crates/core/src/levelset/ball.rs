use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dist, LevelSetError};
use crate::expr::{norm, CompiledFn, Point};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallNorm {
    Euclidean,
    /// Sup-norm ball, i.e. an axis-aligned cube.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallOptions {
    pub starts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for BallOptions {
    fn default() -> Self {
        BallOptions { starts: 16, max_iters: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallMax {
    pub point: Point,
    pub value: f64,
}

fn project(center: &[f64], radius: f64, ball: BallNorm, z: &mut [f64]) {
    match ball {
        BallNorm::Euclidean => {
            let r = dist(z, center);
            if r > radius {
                for (zi, c) in z.iter_mut().zip(center) {
                    *zi = c + (*zi - c) * radius / r;
                }
            }
        }
        BallNorm::Max => {
            for (zi, c) in z.iter_mut().zip(center) {
                *zi = zi.clamp(c - radius, c + radius);
            }
        }
    }
}

fn check(f: &CompiledFn, center: &[f64], radius: f64) -> Result<(), LevelSetError> {
    if center.len() != f.arity() {
        return Err(LevelSetError::InvalidArgument("center dimension differs from arity"));
    }
    if !(radius > 0.0) {
        return Err(LevelSetError::InvalidArgument("radius must be positive"));
    }
    Ok(())
}

/// Maximum of `f` over a ball by projected gradient ascent from the center,
/// the cube corners (sup-norm, arity <= 3) and seeded random starts.
pub fn max_over_ball(
    f: &CompiledFn,
    center: &[f64],
    radius: f64,
    ball: BallNorm,
    opts: &BallOptions,
) -> Result<BallMax, LevelSetError> {
    check(f, center, radius)?;
    let n = center.len();
    let mut starts = vec![center.to_vec()];
    if ball == BallNorm::Max && n <= 3 {
        for mask in 0..(1usize << n) {
            starts.push((0..n).map(|i| center[i] + if mask >> i & 1 == 1 { radius } else { -radius }).collect());
        }
    }
    let mut r = rng::stream(opts.seed, 0);
    for _ in 0..opts.starts {
        let mut z: Vec<f64> = (0..n).map(|i| center[i] + radius * r.random_range(-1.0..=1.0)).collect();
        project(center, radius, ball, &mut z);
        starts.push(z);
    }

    let mut best: Option<BallMax> = None;
    for s in starts {
        if let Some((p, v)) = ascend(f, center, radius, ball, s, opts.max_iters) {
            if best.as_ref().is_none_or(|b| v > b.value) {
                best = Some(BallMax { point: Point(p), value: v });
            }
        }
    }
    best.ok_or(LevelSetError::InvalidArgument("f is undefined at every start point"))
}

fn ascend(
    f: &CompiledFn,
    center: &[f64],
    radius: f64,
    ball: BallNorm,
    mut y: Vec<f64>,
    max_iters: usize,
) -> Option<(Vec<f64>, f64)> {
    let n = y.len();
    let mut g = vec![0.0; n];
    let mut v = f.value_grad(&y, &mut g).ok()?;
    let mut alpha = radius / norm(&g).max(f64::MIN_POSITIVE);
    let mut z = vec![0.0; n];
    for _ in 0..max_iters {
        let mut a = alpha;
        let mut moved = false;
        for _ in 0..60 {
            for i in 0..n {
                z[i] = y[i] + a * g[i];
            }
            project(center, radius, ball, &mut z);
            let gain: f64 = (0..n).map(|i| g[i] * (z[i] - y[i])).sum();
            if let Ok(fz) = f.value(&z) {
                if fz > v && fz >= v + 1e-4 * gain {
                    moved = true;
                    break;
                }
            }
            a *= 0.5;
        }
        if !moved {
            break;
        }
        let step = dist(&z, &y);
        y.copy_from_slice(&z);
        v = f.value_grad(&y, &mut g).ok()?;
        alpha = 2.0 * a;
        if step <= 1e-14 * (1.0 + norm(&y)) {
            break;
        }
    }
    Some((y, v))
}

/// Maximum of `f` over `samples` evenly spaced points of the boundary of a
/// two-dimensional ball (circle or square).
pub fn max_on_ball_boundary_scan(
    f: &CompiledFn,
    center: &[f64],
    radius: f64,
    ball: BallNorm,
    samples: usize,
) -> Result<BallMax, LevelSetError> {
    check(f, center, radius)?;
    if center.len() != 2 {
        return Err(LevelSetError::InvalidArgument("boundary scan is two-dimensional"));
    }
    if samples < 4 {
        return Err(LevelSetError::InvalidArgument("boundary scan needs at least 4 samples"));
    }
    let mut best: Option<BallMax> = None;
    for k in 0..samples {
        let u = k as f64 / samples as f64;
        let p = match ball {
            BallNorm::Euclidean => {
                let th = std::f64::consts::TAU * u;
                [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            }
            BallNorm::Max => {
                // walk the perimeter counter-clockwise from the lower-left corner
                let side = (4.0 * u).floor() as usize;
                let w = 2.0 * radius * (4.0 * u - side as f64);
                let (lo0, lo1) = (center[0] - radius, center[1] - radius);
                let (hi0, hi1) = (center[0] + radius, center[1] + radius);
                match side {
                    0 => [lo0 + w, lo1],
                    1 => [hi0, lo1 + w],
                    2 => [hi0 - w, hi1],
                    _ => [lo0, hi1 - w],
                }
            }
        };
        if let Ok(v) = f.value(&p) {
            if best.as_ref().is_none_or(|b| v > b.value) {
                best = Some(BallMax { point: Point(p.to_vec()), value: v });
            }
        }
    }
    best.ok_or(LevelSetError::InvalidArgument("f is undefined on the whole boundary"))
}
