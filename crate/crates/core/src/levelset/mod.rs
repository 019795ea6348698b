//! Distance to level sets `V_t = {f = t}`.
//!
//! Three independent tools live here:
//!
//! * [`project_to_levelset`]: multi-start penalty continuation, giving an
//!   upper bound on the distance together with the nearest point found.
//! * [`dist_oracle_grid`]: brute-force grid scan for sign changes of `f - t`;
//!   slow, but shares no code path with the projection and serves as its
//!   oracle. [`dist_oracle_adaptive`] wraps it with growing boxes.
//! * [`ekeland_descent`]: descent on `|f|` inside a ball, with the three
//!   Ekeland certificates recomputed from the returned point.
//!
//! An empty fiber has distance 1 from every point by convention.

mod ball;
mod ekeland;
mod oracle;
mod project;

use thiserror::Error;

use crate::expr::{CompiledFn, DomainError};

pub use ball::{max_on_ball_boundary_scan, max_over_ball, BallMax, BallNorm, BallOptions};
pub use ekeland::{ekeland_descent, EkelandOptions, EkelandResult, EkelandStatus};
pub use oracle::{dist_oracle_adaptive, dist_oracle_grid, AdaptiveOracle, GridBox, OracleDistance};
pub use project::{project_to_levelset, ProjectionOptions, ProjectionResult};

/// Distance assigned to an empty fiber.
pub const EMPTY_FIBER_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LevelSetError {
    #[error("projection inconclusive: no feasible point, smallest |f - t| seen was {min_residual:e}")]
    Inconclusive { min_residual: f64 },
    #[error("grid of {nodes} nodes exceeds the budget of {budget}")]
    BoxTooLarge { nodes: f64, budget: usize },
    #[error("query point lies outside the oracle box")]
    PointOutsideBox,
    #[error("grid oracle supports arity <= 3, got {0}")]
    ArityTooLarge(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("ekeland descent needs f(x0) != 0")]
    StartOnFiber,
    #[error("domain error at the query point: {0}")]
    Domain(#[from] DomainError),
}

/// A level `t` of `f` with the feasibility tolerance used to accept points as
/// lying on it.
#[derive(Debug, Clone, Copy)]
pub struct LevelSpec<'a> {
    pub f: &'a CompiledFn,
    pub t: f64,
    pub f_tol: f64,
}

impl<'a> LevelSpec<'a> {
    pub const DEFAULT_F_TOL: f64 = 1e-9;

    pub fn new(f: &'a CompiledFn, t: f64, f_tol: f64) -> Result<Self, LevelSetError> {
        if !(f_tol > 0.0) {
            return Err(LevelSetError::InvalidArgument("f_tol must be positive"));
        }
        Ok(LevelSpec { f, t, f_tol })
    }

    pub fn with_default_tol(f: &'a CompiledFn, t: f64) -> Self {
        LevelSpec { f, t, f_tol: Self::DEFAULT_F_TOL }
    }

    pub fn arity(&self) -> usize {
        self.f.arity()
    }

    pub(crate) fn residual(&self, y: &[f64]) -> Result<f64, DomainError> {
        Ok(self.f.value(y)? - self.t)
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}
