use rand::Rng;
use rand_distr::StandardNormal;

use super::LojaError;
use crate::curve::{geometric, Curve};
use crate::rng;

/// Where samples come from.
#[derive(Debug, Clone)]
pub enum Region {
    /// Uniform in `{r_min <= ||x|| <= r_max}`.
    Annulus { r_min: f64, r_max: f64 },
    /// Uniform in an axis-aligned box; `lo[i] == hi[i]` pins a coordinate.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `X(s)` on a geometric grid of `s` from `s_min` to `s_max`. Uses no
    /// randomness.
    Curve { curve: Curve, s_min: f64, s_max: f64 },
}

#[derive(Debug, Clone)]
pub struct SamplerSpec {
    pub region: Region,
    pub count: usize,
    pub seed: u64,
}

impl SamplerSpec {
    pub fn draw(&self, arity: usize) -> Result<Vec<Vec<f64>>, LojaError> {
        let mut r = rng::stream(self.seed, 0);
        match &self.region {
            Region::Annulus { r_min, r_max } => {
                if !(*r_min >= 0.0 && r_min <= r_max && r_max.is_finite()) {
                    return Err(LojaError::BadSampler("annulus needs 0 <= r_min <= r_max"));
                }
                let n = arity as f64;
                let (a, b) = (r_min.powf(n), r_max.powf(n));
                Ok((0..self.count)
                    .map(|_| {
                        let mut dir: Vec<f64> = (0..arity).map(|_| r.sample(StandardNormal)).collect();
                        let len = crate::expr::norm(&dir);
                        // radius with density proportional to r^(n-1)
                        let rad = (a + r.random::<f64>() * (b - a)).powf(1.0 / n);
                        for v in &mut dir {
                            *v *= rad / len;
                        }
                        dir
                    })
                    .collect())
            }
            Region::Box { lo, hi } => {
                if lo.len() != arity || hi.len() != arity {
                    return Err(LojaError::ArityMismatch { sampler: lo.len(), arity });
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a <= b && a.is_finite() && b.is_finite())) {
                    return Err(LojaError::BadSampler("box needs lo <= hi"));
                }
                Ok((0..self.count)
                    .map(|_| lo.iter().zip(hi).map(|(a, b)| a + r.random::<f64>() * (b - a)).collect())
                    .collect())
            }
            Region::Curve { curve, s_min, s_max } => {
                if curve.arity() != arity {
                    return Err(LojaError::ArityMismatch { sampler: curve.arity(), arity });
                }
                if !(*s_min >= curve.s_min() && s_min < s_max) {
                    return Err(LojaError::BadSampler("curve range needs s_min(curve) <= s_min < s_max"));
                }
                geometric(*s_min, *s_max, self.count)
                    .into_iter()
                    .map(|s| Ok(curve.eval(s)?.into_vec()))
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::norm;

    #[test]
    fn annulus_stays_inside() {
        let spec = SamplerSpec { region: Region::Annulus { r_min: 1.0, r_max: 100.0 }, count: 2000, seed: 9 };
        let pts = spec.draw(2).unwrap();
        assert!(pts.iter().all(|p| (1.0 - 1e-9..=100.0 + 1e-9).contains(&norm(p))));
        // area fraction of the inner half-radius disc is about 1/4
        let inner = pts.iter().filter(|p| norm(p) <= 50.0).count() as f64 / 2000.0;
        assert!((inner - (2500.0 - 1.0) / (10000.0 - 1.0)).abs() < 0.04, "{inner}");
        assert_eq!(pts, spec.draw(2).unwrap());
    }

    #[test]
    fn box_and_curve() {
        let spec = SamplerSpec { region: Region::Box { lo: vec![-1.0, 2.0], hi: vec![1.0, 2.0] }, count: 50, seed: 0 };
        assert!(spec.draw(2).unwrap().iter().all(|p| p[1] == 2.0 && p[0].abs() <= 1.0));
        assert!(spec.draw(3).is_err());
        let c = Curve::parse(&["1/s", "s", "s"], 1.0).unwrap();
        let spec = SamplerSpec { region: Region::Curve { curve: c, s_min: 10.0, s_max: 1000.0 }, count: 3, seed: 0 };
        let pts = spec.draw(3).unwrap();
        assert_eq!(pts[2], vec![1e-3, 1000.0, 1000.0]);
    }
}
