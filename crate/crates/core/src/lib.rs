//! Numerical laboratory for asymptotic critical values and global
//! Łojasiewicz-type inequalities of semialgebraic functions.
//!
//! * [`expr`]: symbolic expressions, exact gradients, compiled evaluation.
//! * [`curve`]: parameterized curves, power-law fits, witness checks.
//! * [`levelset`]: distance to level sets (projection, grid oracle) and
//!   Ekeland-type descent with checked certificates.
//! * [`kinf`]: sphere sweeps detecting asymptotic critical values.
//! * [`loja`]: fitting and testing inequality constants, failure certificates.
//! * [`registry`]: the built-in example functions.

pub mod expr;

pub mod curve;
pub mod levelset;
pub mod kinf;
pub mod loja;
pub mod registry;
pub(crate) mod rng;

pub use curve::{Curve, PowerLaw, SGrid};
pub use expr::{parse, CompiledFn, DomainError, Expr, ExprError, GradientHandle, Point, Vars};
pub use kinf::{SweepRecord, SweepVariant};
pub use levelset::{LevelSpec, ProjectionResult};
pub use loja::{FormKind, LojaForm};
pub use registry::ExampleEntry;
