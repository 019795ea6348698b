//! Fixtures shared by the benchmarks.

use loja_core::registry;
use loja_core::CompiledFn;

/// Compiled registry function; panics on an unknown id.
pub fn example(id: &str) -> CompiledFn {
    registry::lookup(id).unwrap_or_else(|| panic!("unknown example {id}")).compiled().expect("registry parses")
}

/// Point `k` of a fixed spiral of radius up to `r_max`, in the first two
/// coordinates.
pub fn spiral(k: usize, arity: usize, r_max: f64) -> Vec<f64> {
    let a = 0.7 * k as f64;
    let r = r_max * (1.0 + k as f64) / (1.0 + k as f64 + 10.0);
    let mut x = vec![0.5; arity];
    x[0] = r * a.cos();
    x[1] = r * a.sin();
    x
}
