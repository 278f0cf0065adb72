//! Uniform-grid partitions, transition relations, the encoder `s_A`, and the set-based
//! distortion `d(ξ, Ω_A)`.
//!
//! Cells are half-open `[lo, hi)` on every axis except the last slab, which is closed, so
//! every point of the domain lies in exactly one cell. `Ω_A` is never enumerated: the
//! distortion is a longest-path dynamic program over (time × cells).

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AffinePiece, SystemDef, TrajectoryMatrix};
use crate::error::{Error, Result};
use crate::geometry::{sup_sq_dist, BoxRegion, Interval};
use crate::mc::{self, McConfig, MeanEstimate};

/// Default cap on the number of grid cells.
pub const DEFAULT_CELL_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformGrid {
    domain: BoxRegion,
    counts: Vec<usize>,
}

impl UniformGrid {
    pub fn new(domain: BoxRegion, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != domain.dim() {
            return Err(Error::DimensionMismatch { expected: domain.dim(), got: counts.len() });
        }
        if counts.contains(&0) {
            return Err(Error::InvalidParameter("cell counts must be ≥ 1".into()));
        }
        if domain.axes().iter().any(|a| a.width() <= 0.0) {
            return Err(Error::InvalidParameter("grid domain has a zero-width axis".into()));
        }
        counts
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .ok_or_else(|| Error::InvalidParameter("cell count overflows".into()))?;
        Ok(Self { domain, counts })
    }

    pub fn domain(&self) -> &BoxRegion {
        &self.domain
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn num_cells(&self) -> usize {
        self.counts.iter().product()
    }

    /// Boundary `i` of axis `a`; boundary `counts[a]` is the domain's upper end.
    #[inline]
    pub fn boundary(&self, a: usize, i: usize) -> f64 {
        let ax = self.domain.axis(a);
        let n = self.counts[a];
        if i >= n {
            ax.hi()
        } else {
            ax.lo() + ax.width() * i as f64 / n as f64
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.counts).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = flat % self.counts[a];
            flat /= self.counts[a];
        }
        out
    }

    /// Closure of cell `flat` as a box.
    pub fn cell(&self, flat: usize) -> BoxRegion {
        let m = self.multi_index(flat);
        let axes = m.iter().enumerate().map(|(a, &i)| Interval::hull_of(self.boundary(a, i), self.boundary(a, i + 1)));
        BoxRegion::new(axes.collect()).expect("grid has at least one axis")
    }

    /// Cell of `x` along axis `a` under the half-open convention.
    pub fn axis_cell(&self, a: usize, x: f64) -> Option<usize> {
        let ax = self.domain.axis(a);
        if !(ax.lo() <= x && x <= ax.hi()) {
            return None;
        }
        let n = self.counts[a];
        let mut i = (((x - ax.lo()) / ax.width()) * n as f64).floor() as usize;
        i = i.min(n - 1);
        while i > 0 && x < self.boundary(a, i) {
            i -= 1;
        }
        while i + 1 < n && x >= self.boundary(a, i + 1) {
            i += 1;
        }
        Some(i)
    }

    /// `s_A`: index of the unique cell containing `x`.
    pub fn encode(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let multi = (0..self.dim())
            .map(|a| self.axis_cell(a, x[a]))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::OutsideDomain { point: x.to_vec() })?;
        Ok(self.flat_index(&multi))
    }

    /// Cells along axis `a` whose closure meets the closed interval `[lo, hi]`.
    fn closure_range(&self, a: usize, lo: f64, hi: f64) -> (usize, usize) {
        let n = self.counts[a];
        let mut first = self.axis_cell(a, lo).unwrap_or(0);
        while first > 0 && self.boundary(a, first) >= lo {
            first -= 1;
        }
        while first + 1 < n && self.boundary(a, first + 1) < lo {
            first += 1;
        }
        let mut last = self.axis_cell(a, hi).unwrap_or(n - 1);
        while last + 1 < n && self.boundary(a, last + 1) <= hi {
            last += 1;
        }
        while last > first && self.boundary(a, last) > hi {
            last -= 1;
        }
        (first, last)
    }

    /// Half-open cell `i` of axis `a` with its openness flags.
    fn axis_slab(&self, a: usize, i: usize) -> Slab {
        Slab { lo: self.boundary(a, i), hi: self.boundary(a, i + 1), lo_open: false, hi_open: i + 1 < self.counts[a] }
    }

    fn product(&self, ranges: &[(usize, usize)], out: &mut BTreeSet<usize>) {
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            out.insert(self.flat_index(&idx));
            let mut a = ranges.len();
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                if idx[a] < ranges[a].1 {
                    idx[a] += 1;
                    break;
                }
                idx[a] = ranges[a].0;
            }
        }
    }
}

/// One axis of a set with explicit endpoint openness.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Slab {
    lo: f64,
    hi: f64,
    lo_open: bool,
    hi_open: bool,
}

impl Slab {
    fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && (self.lo_open || self.hi_open))
    }

    fn intersect(&self, o: &Slab) -> Slab {
        let (lo, lo_open) = match self.lo.partial_cmp(&o.lo) {
            Some(std::cmp::Ordering::Greater) => (self.lo, self.lo_open),
            Some(std::cmp::Ordering::Less) => (o.lo, o.lo_open),
            _ => (self.lo, self.lo_open || o.lo_open),
        };
        let (hi, hi_open) = match self.hi.partial_cmp(&o.hi) {
            Some(std::cmp::Ordering::Less) => (self.hi, self.hi_open),
            Some(std::cmp::Ordering::Greater) => (o.hi, o.hi_open),
            _ => (self.hi, self.hi_open || o.hi_open),
        };
        Slab { lo, hi, lo_open, hi_open }
    }

    /// Clamp into a closed interval, as trajectories are clamped onto the domain.
    fn clamp_to(&self, d: Interval) -> Slab {
        let mut s = *self;
        if s.lo < d.lo() {
            s.lo = d.lo();
            s.lo_open = false;
        }
        if s.hi > d.hi() {
            s.hi = d.hi();
            s.hi_open = false;
        }
        if s.lo > d.hi() {
            s = Slab { lo: d.hi(), hi: d.hi(), lo_open: false, hi_open: false };
        }
        if s.hi < d.lo() {
            s = Slab { lo: d.lo(), hi: d.lo(), lo_open: false, hi_open: false };
        }
        s
    }
}

/// How successor cells are derived from cell images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionMode {
    /// `(Y, Y')` whenever the closed image of `closure(Y)` meets `closure(Y')`.
    #[default]
    Closure,
    /// Half-open images of half-open cells through the affine pieces; affine systems only.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildOptions {
    #[serde(default)]
    pub mode: TransitionMode,
    #[serde(default = "default_cell_limit")]
    pub cell_limit: usize,
    /// Execution setting only; never serialized so artifacts are independent of it.
    #[serde(default, skip_serializing)]
    pub workers: usize,
}

fn default_cell_limit() -> usize {
    DEFAULT_CELL_LIMIT
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { mode: TransitionMode::Closure, cell_limit: DEFAULT_CELL_LIMIT, workers: 0 }
    }
}

impl BuildOptions {
    pub fn exact() -> Self {
        Self { mode: TransitionMode::Exact, ..Self::default() }
    }
}

/// Adjacency lists `Y ↦ {Y'}`, sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransitionRelation {
    successors: Vec<Vec<usize>>,
}

impl TransitionRelation {
    pub fn from_adjacency(mut successors: Vec<Vec<usize>>) -> Result<Self> {
        let n = successors.len();
        for (i, s) in successors.iter_mut().enumerate() {
            s.sort_unstable();
            s.dedup();
            if s.is_empty() {
                return Err(Error::MalformedRelation(format!("cell {i} has no successor")));
            }
            if s.last().is_some_and(|&j| j >= n) {
                return Err(Error::MalformedRelation(format!("cell {i} points outside the grid")));
            }
        }
        Ok(Self { successors })
    }

    pub fn num_cells(&self) -> usize {
        self.successors.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }

    pub fn successors(&self, cell: usize) -> &[usize] {
        &self.successors[cell]
    }

    pub fn contains(&self, from: usize, to: usize) -> bool {
        self.successors.get(from).is_some_and(|s| s.binary_search(&to).is_ok())
    }

    /// All `(from, to)` pairs in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.successors.iter().enumerate().flat_map(|(i, s)| s.iter().map(move |&j| (i, j))).collect()
    }

    /// Copy of the relation without one transition, for fault-injection tests.
    pub fn without(&self, from: usize, to: usize) -> Self {
        let mut successors = self.successors.clone();
        successors[from].retain(|&j| j != to);
        Self { successors }
    }

    /// Cells reachable from `start` at each time `0..l`.
    pub fn reachable(&self, start: usize, l: usize) -> Vec<Vec<usize>> {
        let mut layers = vec![vec![start]];
        for _ in 1..l {
            let next: BTreeSet<usize> =
                layers.last().expect("non-empty").iter().flat_map(|&c| self.successors[c].iter().copied()).collect();
            layers.push(next.into_iter().collect());
        }
        layers
    }
}

/// Build the grid after checking the resource guard.
pub fn build_partition(domain: BoxRegion, counts: Vec<usize>) -> Result<UniformGrid> {
    UniformGrid::new(domain, counts)
}

/// Sound transition relation of `sys` on `grid`.
pub fn build_transitions(sys: &SystemDef, grid: &UniformGrid, opts: &BuildOptions) -> Result<TransitionRelation> {
    if grid.domain() != sys.domain() {
        return Err(Error::InvalidParameter("grid domain differs from the system domain".into()));
    }
    let cells = grid.num_cells();
    if cells > opts.cell_limit {
        return Err(Error::ResourceGuard { cells, limit: opts.cell_limit });
    }
    let pieces = match opts.mode {
        TransitionMode::Closure => None,
        TransitionMode::Exact => Some(sys.affine_pieces().ok_or_else(|| {
            Error::KindMismatch(format!(
                "exact transitions need an affine or piecewise-affine system, got {}",
                sys.name()
            ))
        })?),
    };
    let per_cell = mc::par_collect(cells, opts.workers, |c| match &pieces {
        None => closure_successors(sys, grid, c),
        Some(p) => exact_successors(sys, grid, p, c),
    });
    TransitionRelation::from_adjacency(per_cell.into_iter().collect::<Result<Vec<_>>>()?)
}

fn closure_successors(sys: &SystemDef, grid: &UniformGrid, cell: usize) -> Result<Vec<usize>> {
    let mut out = BTreeSet::new();
    for img in sys.image(&grid.cell(cell))? {
        if img.axes().iter().any(|a| !(a.lo().is_finite() && a.hi().is_finite())) {
            return Err(Error::NonFinite(format!("image of cell {cell}")));
        }
        let ranges: Vec<(usize, usize)> = img
            .axes()
            .iter()
            .enumerate()
            .map(|(a, iv)| {
                let d = grid.domain().axis(a);
                grid.closure_range(a, d.clamp(iv.lo()), d.clamp(iv.hi()))
            })
            .collect();
        grid.product(&ranges, &mut out);
    }
    Ok(out.into_iter().collect())
}

fn piece_slabs(piece: &AffinePiece, domain: &BoxRegion) -> Vec<Slab> {
    piece
        .region
        .axes()
        .iter()
        .zip(domain.axes())
        .map(|(r, d)| Slab { lo: r.lo(), hi: r.hi(), lo_open: false, hi_open: r.hi() < d.hi() })
        .collect()
}

fn exact_successors(sys: &SystemDef, grid: &UniformGrid, pieces: &[AffinePiece], cell: usize) -> Result<Vec<usize>> {
    let multi = grid.multi_index(cell);
    let slabs: Vec<Slab> = multi.iter().enumerate().map(|(a, &i)| grid.axis_slab(a, i)).collect();
    let mut out = BTreeSet::new();
    for p in pieces {
        let part: Vec<Slab> = slabs.iter().zip(piece_slabs(p, sys.domain())).map(|(s, r)| s.intersect(&r)).collect();
        if part.iter().any(Slab::is_empty) {
            continue;
        }
        let mut ranges = Vec::with_capacity(grid.dim());
        for r in 0..grid.dim() {
            let image = affine_slab(p, r, &part).clamp_to(grid.domain().axis(r));
            let (first, last) = grid.closure_range(r, image.lo, image.hi);
            let hit: Vec<usize> =
                (first..=last).filter(|&i| !grid.axis_slab(r, i).intersect(&image).is_empty()).collect();
            match (hit.first(), hit.last()) {
                (Some(&a), Some(&b)) => ranges.push((a, b)),
                _ => return Err(Error::Internal(format!("empty exact image for cell {cell}"))),
            }
        }
        grid.product(&ranges, &mut out);
    }
    if out.is_empty() {
        return Err(Error::OutsideDomain { point: grid.cell(cell).center() });
    }
    Ok(out.into_iter().collect())
}

/// Range of output coordinate `r` of `Ax + b` over a product of slabs, with attainment flags.
fn affine_slab(p: &AffinePiece, r: usize, x: &[Slab]) -> Slab {
    let mut s = Slab { lo: p.b[r], hi: p.b[r], lo_open: false, hi_open: false };
    for (c, xs) in x.iter().enumerate() {
        let a = p.a[(r, c)];
        if a > 0.0 {
            s.lo += a * xs.lo;
            s.hi += a * xs.hi;
            s.lo_open |= xs.lo_open;
            s.hi_open |= xs.hi_open;
        } else if a < 0.0 {
            s.lo += a * xs.hi;
            s.hi += a * xs.lo;
            s.lo_open |= xs.hi_open;
            s.hi_open |= xs.lo_open;
        }
    }
    s
}

/// `d(ξ, Ω_A)` by dynamic programming over the transition graph from `omega0`.
pub fn distortion(traj: &TrajectoryMatrix, omega0: usize, rel: &TransitionRelation, grid: &UniformGrid) -> Result<f64> {
    let l = traj.horizon();
    if l == 0 {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    if omega0 >= grid.num_cells() || rel.num_cells() != grid.num_cells() {
        return Err(Error::MalformedRelation("relation and grid disagree on the number of cells".into()));
    }
    let cost = |t: usize, c: usize| sup_sq_dist(&traj.states[t], &grid.cell(c));
    let mut frontier: Vec<(usize, f64)> = vec![(omega0, cost(0, omega0)?)];
    let mut best = vec![f64::NEG_INFINITY; grid.num_cells()];
    let mut touched = Vec::new();
    for t in 1..l {
        for &(c, v) in &frontier {
            for &next in rel.successors(c) {
                if best[next] == f64::NEG_INFINITY {
                    touched.push(next);
                }
                best[next] = best[next].max(v);
            }
        }
        if touched.is_empty() {
            return Err(Error::MalformedRelation(format!("no path of length {l} from cell {omega0}")));
        }
        touched.sort_unstable();
        frontier.clear();
        for &c in &touched {
            frontier.push((c, best[c] + cost(t, c)?));
            best[c] = f64::NEG_INFINITY;
        }
        touched.clear();
    }
    let max = frontier.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    Ok(max / l as f64)
}

/// Exhaustive `d(ξ, Ω_A)` over all cell paths; exponential, intended as a test oracle.
pub fn distortion_brute_force(
    traj: &TrajectoryMatrix,
    omega0: usize,
    rel: &TransitionRelation,
    grid: &UniformGrid,
) -> Result<f64> {
    fn walk(
        t: usize,
        cell: usize,
        acc: f64,
        traj: &TrajectoryMatrix,
        rel: &TransitionRelation,
        grid: &UniformGrid,
    ) -> Result<f64> {
        let acc = acc + sup_sq_dist(&traj.states[t], &grid.cell(cell))?;
        if t + 1 == traj.horizon() {
            return Ok(acc);
        }
        rel.successors(cell)
            .iter()
            .try_fold(f64::NEG_INFINITY, |m, &n| Ok(m.max(walk(t + 1, n, acc, traj, rel, grid)?)))
    }
    let first = sup_sq_dist(&traj.states[0], &grid.cell(omega0))?;
    let total = if traj.horizon() == 1 {
        first
    } else {
        rel.successors(omega0)
            .iter()
            .try_fold(f64::NEG_INFINITY, |m, &n| Ok(m.max(walk(1, n, first, traj, rel, grid)?)))?
    };
    Ok(total / traj.horizon() as f64)
}

/// A grid, its transition relation and the fingerprint of the system it was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformGridAbstraction {
    pub format_version: u32,
    pub system: String,
    pub grid: UniformGrid,
    pub options: BuildOptions,
    pub transitions: TransitionRelation,
}

/// `Ω_A = g_A(s_A(ξ))`, held implicitly as the initial cell and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AbstractOutput {
    pub initial: usize,
    pub horizon: usize,
}

impl UniformGridAbstraction {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn build(sys: &SystemDef, counts: Vec<usize>, options: BuildOptions) -> Result<Self> {
        let grid = build_partition(sys.domain().clone(), counts)?;
        let transitions = build_transitions(sys, &grid, &options)?;
        Ok(Self { format_version: Self::FORMAT_VERSION, system: sys.fingerprint(), grid, options, transitions })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let abs: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("abstraction file: {e}")))?;
        if abs.format_version != Self::FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!("unsupported abstraction format {}", abs.format_version)));
        }
        if abs.transitions.num_cells() != abs.grid.num_cells() {
            return Err(Error::MalformedRelation("transition list length differs from the cell count".into()));
        }
        TransitionRelation::from_adjacency(abs.transitions.successors.clone())?;
        Ok(abs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("abstraction serializes")
    }

    /// Fails unless the abstraction was built for `sys`.
    pub fn check_system(&self, sys: &SystemDef) -> Result<()> {
        if self.system != sys.fingerprint() {
            return Err(Error::InvalidParameter(format!(
                "abstraction was built for {}, not {}",
                self.system,
                sys.fingerprint()
            )));
        }
        Ok(())
    }

    pub fn output(&self, xi0: &[f64], horizon: usize) -> Result<AbstractOutput> {
        Ok(AbstractOutput { initial: self.grid.encode(xi0)?, horizon })
    }

    pub fn distortion(&self, traj: &TrajectoryMatrix) -> Result<f64> {
        distortion(traj, self.grid.encode(&traj.states[0])?, &self.transitions, &self.grid)
    }
}

/// Monte Carlo `E[d(ξ, Ω_A)]` over `ξ0` uniform on the domain.
pub fn expected_distortion(
    sys: &SystemDef,
    grid: &UniformGrid,
    rel: &TransitionRelation,
    l: usize,
    mc: McConfig,
) -> Result<MeanEstimate> {
    if mc.samples < 2 {
        return Err(Error::InvalidParameter("expected distortion needs at least 2 samples".into()));
    }
    let values = mc::par_collect(mc.samples, mc.workers, |i| {
        let x0 = mc::uniform_in(&mut mc::stream(mc.seed, i as u64), grid.domain());
        let traj = sys.behavior(&x0, l)?;
        distortion(&traj, grid.encode(&x0)?, rel, grid)
    });
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(mc::mean_stderr(&values))
}

/// Number of sampled trajectories whose cell sequence is not a path of `rel`.
pub fn check_inclusion(
    sys: &SystemDef,
    grid: &UniformGrid,
    rel: &TransitionRelation,
    l: usize,
    mc: McConfig,
) -> Result<usize> {
    let flags = mc::par_collect(mc.samples, mc.workers, |i| -> Result<bool> {
        let x0 = mc::uniform_in(&mut mc::stream(mc.seed, i as u64), grid.domain());
        let cells = sys.behavior(&x0, l)?.states.iter().map(|x| grid.encode(x)).collect::<Result<Vec<_>>>()?;
        Ok(cells.windows(2).any(|w| !rel.contains(w[0], w[1])))
    });
    flags.into_iter().try_fold(0, |n, v| Ok(n + v? as usize))
}

/// Boxes of the cells visited by the true trajectory; one member of `Ω_A` when `rel` is sound.
pub fn trajectory_cell_boxes(grid: &UniformGrid, traj: &TrajectoryMatrix) -> Result<Vec<BoxRegion>> {
    traj.states.iter().map(|x| grid.encode(x).map(|c| grid.cell(c))).collect()
}

/// Every cell path of length `l` from `start`; exponential, for small test cases.
pub fn enumerate_paths(rel: &TransitionRelation, start: usize, l: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![vec![start]];
    for _ in 1..l {
        paths = paths
            .into_par_iter()
            .flat_map_iter(|p| {
                let last = *p.last().expect("non-empty");
                rel.successors(last).iter().map(move |&n| {
                    let mut q = p.clone();
                    q.push(n);
                    q
                })
            })
            .collect();
    }
    paths
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::chebyshev_of_product;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(k: usize) -> UniformGrid {
        UniformGrid::new(BoxRegion::cube(0.0, 1.0, 1).unwrap(), vec![k]).unwrap()
    }

    #[test]
    fn partition_examples() {
        let g = unit_grid(5);
        let cells: Vec<(f64, f64)> = (0..5).map(|i| (g.cell(i).axis(0).lo(), g.cell(i).axis(0).hi())).collect();
        assert_eq!(cells, vec![(0.0, 0.2), (0.2, 0.4), (0.4, 0.6), (0.6, 0.8), (0.8, 1.0)]);
        let cube = UniformGrid::new(BoxRegion::cube(-1.0, 1.0, 3).unwrap(), vec![10, 10, 10]).unwrap();
        assert_eq!(cube.num_cells(), 1000);
        assert_eq!(unit_grid(1).cell(0), BoxRegion::cube(0.0, 1.0, 1).unwrap());
        assert!(UniformGrid::new(BoxRegion::from_bounds(&[(0.0, 0.0)]).unwrap(), vec![3]).is_err());
        assert!(UniformGrid::new(BoxRegion::cube(0.0, 1.0, 1).unwrap(), vec![0]).is_err());
    }

    #[test]
    fn encode_examples() {
        let g = unit_grid(5);
        assert_eq!(g.encode(&[0.7]).unwrap(), 3);
        assert_eq!(g.encode(&[0.2]).unwrap(), 1);
        assert_eq!(g.encode(&[1.0]).unwrap(), 4);
        assert_eq!(g.encode(&[0.0]).unwrap(), 0);
        assert!(matches!(g.encode(&[1.2]), Err(Error::OutsideDomain { .. })));
        let cube = UniformGrid::new(BoxRegion::cube(-1.0, 1.0, 3).unwrap(), vec![10, 10, 10]).unwrap();
        for flat in [0, 1, 57, 999] {
            assert_eq!(cube.encode(&cube.cell(flat).center()).unwrap(), flat);
            assert_eq!(cube.flat_index(&cube.multi_index(flat)), flat);
        }
    }

    #[test]
    fn encode_respects_every_boundary() {
        for k in 1..40 {
            let g = unit_grid(k);
            for i in 0..k {
                let lo = g.boundary(0, i);
                assert_eq!(g.encode(&[lo]).unwrap(), i);
                assert!(g.cell(i).contains(&[lo]));
            }
        }
    }

    #[test]
    fn square_map_figure_relation() {
        let sys = SystemDef::square();
        let abs = UniformGridAbstraction::build(&sys, vec![5], BuildOptions::default()).unwrap();
        let expected = vec![(0, 0), (1, 0), (2, 0), (2, 1), (3, 1), (3, 2), (3, 3), (4, 3), (4, 4)];
        assert_eq!(abs.transitions.pairs(), expected);
    }

    #[test]
    fn identity_maps_cells_to_themselves_and_neighbours() {
        let abs = UniformGridAbstraction::build(&SystemDef::identity(1), vec![4], BuildOptions::default()).unwrap();
        for c in 0..4 {
            assert!(abs.transitions.contains(c, c));
        }
        assert_eq!(abs.transitions.num_transitions(), 10);
        let exact = UniformGridAbstraction::build(&SystemDef::identity(1), vec![4], BuildOptions::exact()).unwrap();
        assert_eq!(exact.transitions.pairs(), vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn doubling_closure_contains_exact() {
        let sys = SystemDef::doubling();
        for k in [1, 2, 3, 4, 5, 8, 16] {
            let closure = UniformGridAbstraction::build(&sys, vec![k], BuildOptions::default()).unwrap();
            let exact = UniformGridAbstraction::build(&sys, vec![k], BuildOptions::exact()).unwrap();
            for (a, b) in exact.transitions.pairs() {
                assert!(closure.transitions.contains(a, b), "k={k}: ({a},{b})");
            }
        }
        let exact = UniformGridAbstraction::build(&sys, vec![4], BuildOptions::exact()).unwrap();
        assert_eq!(exact.transitions.pairs(), vec![(0, 0), (0, 1), (1, 2), (1, 3), (2, 0), (2, 1), (3, 2), (3, 3)]);
        let closure = UniformGridAbstraction::build(&sys, vec![4], BuildOptions::default()).unwrap();
        assert_eq!(closure.transitions.successors(0), &[0, 1, 2]);
    }

    #[test]
    fn dsl_doubling_relation_is_tight() {
        let dsl = SystemDef::from_spec(&crate::dynamics::SystemSpec::Expr {
            f: vec!["mod1(2*x1)".into()],
            domain: BoxRegion::cube(0.0, 1.0, 1).unwrap(),
            smoothness: crate::dynamics::Smoothness::PiecewiseAffine { pieces: 2 },
            lipschitz: Some(2.0),
        })
        .unwrap();
        let sys = SystemDef::doubling();
        for k in [4, 5, 6, 7] {
            let a = build_transitions(&dsl, &unit_grid(k), &BuildOptions::default()).unwrap();
            let exact = UniformGridAbstraction::build(&sys, vec![k], BuildOptions::exact()).unwrap();
            let closure = UniformGridAbstraction::build(&sys, vec![k], BuildOptions::default()).unwrap();
            for (x, y) in exact.transitions.pairs() {
                assert!(a.contains(x, y), "k={k}: exact ({x},{y}) missing");
            }
            // mod1(2) = 0 while the built-in keeps f(1) = 1, so (last, 0) is the only extra pair
            for (x, y) in a.pairs() {
                assert!(closure.transitions.contains(x, y) || (x, y) == (k - 1, 0), "k={k}: ({x},{y})");
            }
            assert!(a.num_transitions() < k * k);
        }
    }

    #[test]
    fn exact_mode_rejects_nonlinear() {
        let err = UniformGridAbstraction::build(&SystemDef::square(), vec![5], BuildOptions::exact()).unwrap_err();
        assert!(matches!(err, Error::KindMismatch(_)));
    }

    #[test]
    fn resource_guard() {
        let opts = BuildOptions { cell_limit: 100, ..BuildOptions::default() };
        let err = UniformGridAbstraction::build(&SystemDef::nonlinear3d(), vec![5, 5, 5], opts).unwrap_err();
        assert_eq!(err, Error::ResourceGuard { cells: 125, limit: 100 });
    }

    #[test]
    fn distortion_examples() {
        let sys = SystemDef::square();
        let abs = UniformGridAbstraction::build(&sys, vec![5], BuildOptions::default()).unwrap();
        let traj = sys.behavior(&[0.7], 2).unwrap();
        let d = abs.distortion(&traj).unwrap();
        // successors of Y4 are Y2, Y3, Y4; the farthest point from 0.49 among them is 0.8
        assert_relative_eq!(d, (0.01 + 0.31 * 0.31) / 2.0, max_relative = 1e-12);
        assert_eq!(d, distortion_brute_force(&traj, 3, &abs.transitions, &abs.grid).unwrap());

        let one = sys.behavior(&[0.7], 1).unwrap();
        assert_relative_eq!(abs.distortion(&one).unwrap(), 0.01, max_relative = 1e-12);

        let single = UniformGridAbstraction::build(&sys, vec![1], BuildOptions::default()).unwrap();
        let t3 = sys.behavior(&[0.3], 3).unwrap();
        let whole = BoxRegion::cube(0.0, 1.0, 1).unwrap();
        let direct: f64 = t3.states.iter().map(|x| sup_sq_dist(x, &whole).unwrap()).sum::<f64>() / 3.0;
        assert_relative_eq!(single.distortion(&t3).unwrap(), direct, max_relative = 1e-15);
    }

    #[test]
    fn dp_equals_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let systems = [SystemDef::doubling(), SystemDef::square(), SystemDef::identity(1)];
        for sys in &systems {
            for k in [1, 3, 7, 10] {
                for opts in [BuildOptions::default(), BuildOptions::exact()] {
                    let Ok(abs) = UniformGridAbstraction::build(sys, vec![k], opts) else { continue };
                    for _ in 0..40 {
                        let l = rng.gen_range(1..=4);
                        let x0 = [rng.gen::<f64>()];
                        let traj = sys.behavior(&x0, l).unwrap();
                        let w0 = abs.grid.encode(&x0).unwrap();
                        let dp = distortion(&traj, w0, &abs.transitions, &abs.grid).unwrap();
                        let bf = distortion_brute_force(&traj, w0, &abs.transitions, &abs.grid).unwrap();
                        assert_eq!(dp.to_bits(), bf.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn distortion_dominates_chebyshev_of_true_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sys = SystemDef::nonlinear3d();
        let abs = UniformGridAbstraction::build(&sys, vec![4, 4, 4], BuildOptions::default()).unwrap();
        for _ in 0..200 {
            let x0 = mc::uniform_in(&mut rng, sys.domain());
            let l = rng.gen_range(1..=4);
            let traj = sys.behavior(&x0, l).unwrap();
            let d = abs.distortion(&traj).unwrap();
            let cheb = chebyshev_of_product(&trajectory_cell_boxes(&abs.grid, &traj).unwrap());
            let xi = traj.flat();
            let dist2: f64 = xi.iter().zip(&cheb.center).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(d * l as f64 >= dist2 + cheb.radius * cheb.radius - 1e-12);
        }
    }

    #[test]
    fn identity_expected_distortion() {
        let sys = SystemDef::identity(1);
        for k in [1usize, 3, 8] {
            let abs = UniformGridAbstraction::build(&sys, vec![k], BuildOptions::exact()).unwrap();
            let est = expected_distortion(&sys, &abs.grid, &abs.transitions, 3, McConfig::new(20_000, 4)).unwrap();
            let exact = 7.0 / (12.0 * (k * k) as f64);
            assert!((est.mean - exact).abs() < 4.0 * est.stderr, "k={k}: {est:?} vs {exact}");
        }
    }

    #[test]
    fn expected_distortion_is_reproducible() {
        let sys = SystemDef::square();
        let abs = UniformGridAbstraction::build(&sys, vec![5], BuildOptions::default()).unwrap();
        let run = |w| expected_distortion(&sys, &abs.grid, &abs.transitions, 2, McConfig::new(2, 9).with_workers(w));
        let a = run(1).unwrap();
        assert_eq!(a, run(4).unwrap());
        assert!(expected_distortion(&sys, &abs.grid, &abs.transitions, 2, McConfig::new(1, 9)).is_err());
    }

    #[test]
    fn refinement_does_not_increase_distortion() {
        let sys = SystemDef::square();
        let mut prev: Option<MeanEstimate> = None;
        for k in [2, 4, 8, 16] {
            let abs = UniformGridAbstraction::build(&sys, vec![k], BuildOptions::default()).unwrap();
            let est = expected_distortion(&sys, &abs.grid, &abs.transitions, 3, McConfig::new(1000, 8)).unwrap();
            if let Some(p) = prev {
                assert!(est.mean <= p.mean + 3.0 * (p.stderr.hypot(est.stderr)));
            }
            prev = Some(est);
        }
    }

    #[test]
    fn inclusion_holds_and_fault_injection_is_caught() {
        let sys = SystemDef::square();
        let abs = UniformGridAbstraction::build(&sys, vec![5], BuildOptions::default()).unwrap();
        let mc = McConfig::new(10_000, 1);
        assert_eq!(check_inclusion(&sys, &abs.grid, &abs.transitions, 4, mc).unwrap(), 0);
        assert_eq!(check_inclusion(&sys, &abs.grid, &abs.transitions, 1, mc).unwrap(), 0);
        let broken = abs.transitions.without(3, 2);
        assert!(check_inclusion(&sys, &abs.grid, &broken, 2, mc).unwrap() > 0);

        for (sys, counts) in [
            (SystemDef::doubling(), vec![8]),
            (SystemDef::identity(2), vec![3, 4]),
            (SystemDef::nonlinear3d(), vec![5, 5, 5]),
            (SystemDef::lti(vec![vec![0.5, 0.2], vec![-0.3, 0.4]]).unwrap(), vec![6, 6]),
        ] {
            for opts in [BuildOptions::default(), BuildOptions::exact()] {
                let Ok(abs) = UniformGridAbstraction::build(&sys, counts.clone(), opts) else { continue };
                assert_eq!(check_inclusion(&sys, &abs.grid, &abs.transitions, 5, McConfig::new(3000, 2)).unwrap(), 0);
            }
        }
    }

    #[test]
    fn json_roundtrip() {
        let sys = SystemDef::square();
        let abs = UniformGridAbstraction::build(&sys, vec![5], BuildOptions::default()).unwrap();
        let back = UniformGridAbstraction::from_json(&abs.to_json()).unwrap();
        assert_eq!(back, abs);
        back.check_system(&sys).unwrap();
        assert!(back.check_system(&SystemDef::doubling()).is_err());
        let tampered = abs.to_json().replace("[[0]", "[[]");
        assert!(UniformGridAbstraction::from_json(&tampered).is_err());
    }

    #[test]
    fn reachable_layers_and_paths() {
        let abs = UniformGridAbstraction::build(&SystemDef::doubling(), vec![4], BuildOptions::exact()).unwrap();
        assert_eq!(abs.transitions.reachable(0, 3), vec![vec![0], vec![0, 1], vec![0, 1, 2, 3]]);
        assert_eq!(enumerate_paths(&abs.transitions, 0, 3).len(), 4);
    }

    #[test]
    fn transitions_independent_of_workers() {
        let sys = SystemDef::nonlinear3d();
        let build = |w| {
            let opts = BuildOptions { workers: w, ..BuildOptions::default() };
            UniformGridAbstraction::build(&sys, vec![6, 6, 6], opts).unwrap().transitions
        };
        assert_eq!(build(1), build(4));
    }
}
