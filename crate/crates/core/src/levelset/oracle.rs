use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dist, LevelSetError, LevelSpec};

/// Node budget of a single grid scan.
pub const MAX_GRID_NODES: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl GridBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, LevelSetError> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(LevelSetError::InvalidArgument("box needs lo < hi on every axis"));
        }
        Ok(GridBox { lo, hi })
    }

    /// Cube of half-width `h` around `c`.
    pub fn centered(c: &[f64], h: f64) -> Self {
        GridBox { lo: c.iter().map(|v| v - h).collect(), hi: c.iter().map(|v| v + h).collect() }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| a <= v && v <= b)
    }
}

/// Result of a grid scan. `dist` is `+inf` when no cell changes sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleDistance {
    pub dist: f64,
    pub cell_diagonal: f64,
}

impl OracleDistance {
    pub fn found(&self) -> bool {
        self.dist.is_finite()
    }
}

struct Grid {
    lo: Vec<f64>,
    step: Vec<f64>,
    counts: Vec<usize>,
}

impl Grid {
    fn new(bx: &GridBox, resolution: f64) -> Result<Grid, LevelSetError> {
        let mut counts = Vec::new();
        let mut step = Vec::new();
        let mut total = 1.0f64;
        for (a, b) in bx.lo.iter().zip(&bx.hi) {
            let cells = ((b - a) / resolution).ceil().max(1.0);
            total *= cells + 1.0;
            counts.push(cells as usize + 1);
            step.push((b - a) / cells);
        }
        if total > MAX_GRID_NODES as f64 {
            return Err(LevelSetError::BoxTooLarge { nodes: total, budget: MAX_GRID_NODES });
        }
        Ok(Grid { lo: bx.lo.clone(), step, counts })
    }

    fn node(&self, idx: &[usize], out: &mut [f64]) {
        for i in 0..idx.len() {
            out[i] = self.lo[i] + self.step[i] * idx[i] as f64;
        }
    }

    fn cell_diagonal(&self) -> f64 {
        self.step.iter().map(|h| h * h).sum::<f64>().sqrt()
    }
}

/// Brute-force distance from `x` to `{f = t}` on a regular grid over `bx`.
///
/// Every grid edge whose endpoints have opposite signs of `f - t` contributes
/// its linearly interpolated crossing point; nodes with `|f - t| <= f_tol`
/// count directly. Nodes outside the domain of `f` are skipped.
pub fn dist_oracle_grid(
    level: &LevelSpec<'_>,
    x: &[f64],
    bx: &GridBox,
    resolution: f64,
) -> Result<OracleDistance, LevelSetError> {
    let n = level.arity();
    if n > 3 {
        return Err(LevelSetError::ArityTooLarge(n));
    }
    if !(resolution > 0.0) {
        return Err(LevelSetError::InvalidArgument("resolution must be positive"));
    }
    if x.len() != n || bx.lo.len() != n {
        return Err(LevelSetError::InvalidArgument("dimension mismatch"));
    }
    if !bx.contains(x) {
        return Err(LevelSetError::PointOutsideBox);
    }
    let grid = Grid::new(bx, resolution)?;
    let cell_diagonal = grid.cell_diagonal();
    // Axis 0 is the outer (slab) axis; each slab is evaluated in full and
    // compared with its predecessor.
    let slab_len: usize = grid.counts[1..].iter().product();
    let slab = |k: usize| -> Vec<f64> {
        (0..slab_len)
            .into_par_iter()
            .map_init(
                || (vec![0usize; n], vec![0.0; n]),
                |(idx, pt), j| {
                    idx[0] = k;
                    let mut rem = j;
                    for i in (1..n).rev() {
                        idx[i] = rem % grid.counts[i];
                        rem /= grid.counts[i];
                    }
                    grid.node(idx, pt);
                    level.residual(pt).unwrap_or(f64::NAN)
                },
            )
            .collect()
    };

    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; n];
    let mut pa = vec![0.0; n];
    let mut pb = vec![0.0; n];
    let mut crossing = vec![0.0; n];
    let mut consider = |ia: &[usize], va: f64, ib: &[usize], vb: f64, best: &mut f64| {
        if !(va.is_finite() && vb.is_finite()) || !(va * vb < 0.0) {
            return;
        }
        grid.node(ia, &mut pa);
        grid.node(ib, &mut pb);
        let s = va / (va - vb);
        for i in 0..n {
            crossing[i] = pa[i] + s * (pb[i] - pa[i]);
        }
        *best = best.min(dist(&crossing, x));
    };

    let unflatten = |j: usize, k: usize, idx: &mut [usize]| {
        idx[0] = k;
        let mut rem = j;
        for i in (1..n).rev() {
            idx[i] = rem % grid.counts[i];
            rem /= grid.counts[i];
        }
    };

    let mut prev: Option<Vec<f64>> = None;
    let mut other = vec![0usize; n];
    let mut node_pt = vec![0.0; n];
    for k in 0..grid.counts[0] {
        let cur = slab(k);
        for j in 0..slab_len {
            let v = cur[j];
            if v.is_nan() {
                continue;
            }
            unflatten(j, k, &mut idx);
            if v.abs() <= level.f_tol {
                grid.node(&idx, &mut node_pt);
                best = best.min(dist(&node_pt, x));
            }
            if let Some(p) = &prev {
                other.copy_from_slice(&idx);
                other[0] = k - 1;
                consider(&idx, v, &other, p[j], &mut best);
            }
            // neighbours within the slab along axes 1..n
            let mut stride = 1;
            for i in (1..n).rev() {
                if idx[i] + 1 < grid.counts[i] {
                    other.copy_from_slice(&idx);
                    other[i] += 1;
                    consider(&idx, v, &other, cur[j + stride], &mut best);
                }
                stride *= grid.counts[i];
            }
        }
        prev = Some(cur);
    }
    Ok(OracleDistance { dist: best, cell_diagonal })
}

/// Grid oracle on boxes of doubling size around the query point, followed by
/// a confirmation grid and a quadtree refinement of the cells that change
/// sign.
///
/// A search box of half-width `h` uses cells of side `2h/search_cells`, and a
/// fiber component that fits inside one such cell is invisible to it. The
/// refinement only subdivides cells whose corners already disagree in sign,
/// so the same limit applies at the confirmation spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOracle {
    /// Finest cell side reached by the refinement.
    pub resolution: f64,
    /// Cells per side of the doubling search boxes.
    pub search_cells: usize,
    /// Cells per side of the confirmation box (for arity 2; arity 3 keeps the
    /// same node count).
    pub confirm_cells: usize,
    /// Search stops (reporting `+inf`) past this half-width.
    pub max_half_width: f64,
}

impl Default for AdaptiveOracle {
    fn default() -> Self {
        AdaptiveOracle { resolution: 2e-3, search_cells: 64, confirm_cells: 128, max_half_width: 1e6 }
    }
}

/// Cap on live cells during refinement; a fiber with interior (f = t on an
/// open set) would otherwise make the work list explode.
const MAX_LIVE_CELLS: usize = 200_000;

#[derive(Debug, Clone)]
struct Cell {
    lo: Vec<f64>,
    size: Vec<f64>,
}

fn box_dist(cell: &Cell, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let hi = cell.lo[i] + cell.size[i];
        let d = if x[i] < cell.lo[i] {
            cell.lo[i] - x[i]
        } else if x[i] > hi {
            x[i] - hi
        } else {
            0.0
        };
        s += d * d;
    }
    s.sqrt()
}

/// Evaluates the lattice `lo + k*step`, `k < counts`, and scans its cells.
/// Returns the closest crossing and the cells with a sign change (or a node
/// on the fiber), each of side `step`.
fn scan_lattice(level: &LevelSpec<'_>, x: &[f64], lo: &[f64], step: &[f64], counts: &[usize]) -> (f64, Vec<Cell>) {
    let n = x.len();
    let total: usize = counts.iter().product();
    let mut strides = vec![1usize; n];
    for i in 1..n {
        strides[i] = strides[i - 1] * counts[i - 1];
    }
    let coords = |j: usize, p: &mut [f64], k: &mut [usize]| {
        let mut rem = j;
        for i in 0..n {
            k[i] = rem % counts[i];
            rem /= counts[i];
            p[i] = lo[i] + step[i] * k[i] as f64;
        }
    };
    let eval = |(p, k): &mut ([f64; 3], [usize; 3]), j: usize| {
        coords(j, &mut p[..n], &mut k[..n]);
        level.residual(&p[..n]).unwrap_or(f64::NAN)
    };
    let values: Vec<f64> = if total > 1 << 14 {
        (0..total).into_par_iter().map_init(|| ([0.0; 3], [0; 3]), eval).collect()
    } else {
        let mut buf = ([0.0; 3], [0; 3]);
        (0..total).map(|j| eval(&mut buf, j)).collect()
    };

    let mut best = f64::INFINITY;
    let mut cells = Vec::new();
    let mut pa = vec![0.0; n];
    let mut pb = vec![0.0; n];
    let mut ka = vec![0; n];
    let mut kb = vec![0; n];
    let mut crossing = vec![0.0; n];
    let offsets: Vec<usize> =
        (0..1usize << n).map(|b| (0..n).filter(|i| b >> i & 1 == 1).map(|i| strides[i]).sum()).collect();
    for j in 0..total {
        if j > 0 {
            // odometer over the lattice, axis 0 fastest
            for i in 0..n {
                ka[i] += 1;
                if ka[i] < counts[i] {
                    break;
                }
                ka[i] = 0;
            }
        }
        if values[j].abs() <= level.f_tol {
            coords(j, &mut pa, &mut kb);
            best = best.min(dist(&pa, x));
        }
        if ka.iter().zip(counts).any(|(k, c)| k + 1 >= *c) {
            continue;
        }
        // j is the low corner of a cell
        let (mut pos, mut neg, mut zero) = (false, false, false);
        for &o in &offsets {
            let v = values[j + o];
            pos |= v > 0.0;
            neg |= v < 0.0;
            zero |= v.abs() <= level.f_tol;
        }
        if !((pos && neg) || zero) {
            continue;
        }
        for (b, &o) in offsets.iter().enumerate() {
            let vb = values[j + o];
            // edges leaving this corner in the positive direction
            for i in 0..n {
                if b >> i & 1 == 1 {
                    continue;
                }
                let vc = values[j + o + strides[i]];
                if vb * vc < 0.0 {
                    coords(j + o, &mut pb, &mut kb);
                    let s = vb / (vb - vc);
                    crossing.copy_from_slice(&pb);
                    crossing[i] += s * step[i];
                    best = best.min(dist(&crossing, x));
                }
            }
        }
        coords(j, &mut pa, &mut kb);
        cells.push(Cell { lo: pa.clone(), size: step.to_vec() });
    }
    (best, cells)
}

pub fn dist_oracle_adaptive(
    level: &LevelSpec<'_>,
    x: &[f64],
    opts: &AdaptiveOracle,
) -> Result<OracleDistance, LevelSetError> {
    let n = level.arity();
    if n > 3 {
        return Err(LevelSetError::ArityTooLarge(n));
    }
    if x.len() != n {
        return Err(LevelSetError::InvalidArgument("dimension mismatch"));
    }
    if opts.search_cells < 2 || opts.confirm_cells < 2 || !(opts.resolution > 0.0) {
        return Err(LevelSetError::InvalidArgument("adaptive oracle needs >= 2 cells and positive resolution"));
    }
    let diag = |side: f64| side * (n as f64).sqrt();
    let uniform = |half: f64, cells: usize| {
        let lo: Vec<f64> = x.iter().map(|v| v - half).collect();
        let step = vec![2.0 * half / cells as f64; n];
        (lo, step, vec![cells + 1; n])
    };

    let mut h = opts.resolution * opts.search_cells as f64 / 2.0;
    let found = loop {
        let (lo, step, counts) = uniform(h, opts.search_cells);
        let (d, _) = scan_lattice(level, x, &lo, &step, &counts);
        // A crossing at distance <= h lies inside the ball of radius h, so no
        // closer crossing can hide outside the box.
        if d <= h {
            break d + diag(step[0]);
        }
        if h >= opts.max_half_width {
            return Ok(OracleDistance { dist: f64::INFINITY, cell_diagonal: diag(step[0]) });
        }
        h *= 2.0;
    };

    let confirm = ((opts.confirm_cells as f64).powf(2.0 / n as f64).round() as usize).max(2);
    let (lo, step, counts) = uniform(found, confirm);
    let (mut best, mut cells) = scan_lattice(level, x, &lo, &step, &counts);
    let mut side = step[0];
    while side > opts.resolution && !cells.is_empty() && cells.len() <= MAX_LIVE_CELLS {
        cells.retain(|c| box_dist(c, x) <= best);
        let next: Vec<(f64, Vec<Cell>)> = cells
            .par_iter()
            .map(|c| {
                let half: Vec<f64> = c.size.iter().map(|s| s / 2.0).collect();
                scan_lattice(level, x, &c.lo, &half, &vec![3; n])
            })
            .collect();
        cells = Vec::new();
        for (d, kids) in next {
            best = best.min(d);
            cells.extend(kids);
        }
        side /= 2.0;
    }
    Ok(OracleDistance { dist: best, cell_diagonal: diag(side) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, CompiledFn, Vars};
    use crate::levelset::{project_to_levelset, ProjectionOptions};

    fn compiled(text: &str, vars: &[&str]) -> CompiledFn {
        CompiledFn::new(&parse(text, &Vars::named(vars.iter().copied())).unwrap())
    }

    #[test]
    fn hyperplane() {
        let f = compiled("x1", &["x1", "x2"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let bx = GridBox::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let d = dist_oracle_grid(&level, &[3.0, 4.0], &bx, 1e-2).unwrap();
        assert!((d.dist - 3.0).abs() <= 1e-2, "{}", d.dist);
    }

    #[test]
    fn empty_fiber_gives_infinity() {
        let f = compiled("x^2 + y^2 + 1", &["x", "y"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let bx = GridBox::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let d = dist_oracle_grid(&level, &[1.0, 2.0], &bx, 1e-2).unwrap();
        assert!(!d.found());
        let a = dist_oracle_adaptive(&level, &[1.0, 2.0], &AdaptiveOracle { max_half_width: 100.0, ..Default::default() })
            .unwrap();
        assert!(!a.found());
    }

    #[test]
    fn broughton_agrees_with_projection() {
        let f = compiled("x*(x*y - 1)", &["x", "y"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let bx = GridBox::new(vec![-4.0, -4.0], vec![4.0, 4.0]).unwrap();
        let oracle = dist_oracle_grid(&level, &[2.0, 2.0], &bx, 2e-3).unwrap();
        let p = project_to_levelset(&level, &[2.0, 2.0], &ProjectionOptions::default()).unwrap();
        assert!((p.dist_upper - 1.41).abs() < 0.01, "{}", p.dist_upper);
        assert!((p.dist_upper - oracle.dist).abs() <= oracle.cell_diagonal, "{} vs {}", p.dist_upper, oracle.dist);
    }

    #[test]
    fn three_dimensional_plane() {
        let f = compiled("x + y + z", &["x", "y", "z"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let bx = GridBox::centered(&[1.0, 1.0, 1.0], 3.0);
        let d = dist_oracle_grid(&level, &[1.0, 1.0, 1.0], &bx, 0.05).unwrap();
        assert!((d.dist - 3f64.sqrt()).abs() <= d.cell_diagonal, "{}", d.dist);
    }

    #[test]
    fn adaptive_matches_fixed_box() {
        let f = compiled("x*(x*y - 1)", &["x", "y"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let a = dist_oracle_adaptive(&level, &[2.0, 2.0], &AdaptiveOracle::default()).unwrap();
        assert!((a.dist - 1.4142).abs() < 5e-3, "{}", a.dist);
        let circle = compiled("x^2 + y^2 - 25", &["x", "y"]);
        let level = LevelSpec::with_default_tol(&circle, 0.0);
        let far = dist_oracle_adaptive(&level, &[30.0, 40.0], &AdaptiveOracle::default()).unwrap();
        assert!((far.dist - 45.0).abs() <= far.cell_diagonal, "{}", far.dist);
    }

    #[test]
    fn adaptive_reaches_fine_resolution_far_away() {
        let f = compiled("x + 2*y - 1", &["x", "y"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let x = [40.0, -70.0];
        let exact = (40.0 - 140.0 - 1.0f64).abs() / 5f64.sqrt();
        let a = dist_oracle_adaptive(&level, &x, &AdaptiveOracle::default()).unwrap();
        assert!(a.cell_diagonal <= 2e-3 * 2f64.sqrt());
        assert!((a.dist - exact).abs() <= a.cell_diagonal, "{} vs {exact}", a.dist);
    }

    #[test]
    fn guards() {
        let f = compiled("x", &["x"]);
        let level = LevelSpec::with_default_tol(&f, 0.0);
        let bx = GridBox::new(vec![-1.0], vec![1.0]).unwrap();
        assert_eq!(dist_oracle_grid(&level, &[2.0], &bx, 0.1), Err(LevelSetError::PointOutsideBox));
        assert!(matches!(dist_oracle_grid(&level, &[0.5], &bx, 1e-9), Err(LevelSetError::BoxTooLarge { .. })));
        let g = compiled("a + b + c + d", &["a", "b", "c", "d"]);
        let l4 = LevelSpec::with_default_tol(&g, 0.0);
        let b4 = GridBox::centered(&[0.0; 4], 1.0);
        assert_eq!(dist_oracle_grid(&l4, &[0.0; 4], &b4, 0.5), Err(LevelSetError::ArityTooLarge(4)));
    }
}
