//! Reproductions of the doubling-map analysis (closed-form optimal abstraction, achievability,
//! bound ratio, covering inequality) and the 3-D nonlinear benchmark.

use serde::{Deserialize, Serialize};

use crate::abstraction::{
    check_inclusion, enumerate_paths, expected_distortion, BuildOptions, UniformGridAbstraction, DEFAULT_CELL_LIMIT,
};
use crate::bounds::{c_constant, covering_lower_bound, distortion_lower_bound, BoundInputs, CMode, Order};
use crate::dynamics::SystemDef;
use crate::entropy::{entropy_closed_form, entropy_report_mc};
use crate::error::{Error, Result};
use crate::geometry::{chebyshev_of_product, unit_ball_volume};
use crate::mc::{McConfig, MeanEstimate};

/// Cells of the optimal doubling abstraction: `k` pieces on each of the `2^{l−1}` segments.
pub fn doubling_cells(l: usize, k: usize) -> Result<usize> {
    if l == 0 || k == 0 {
        return Err(Error::InvalidParameter("l and k must be ≥ 1".into()));
    }
    if l > 40 {
        return Err(Error::InvalidParameter("horizon too large for the doubling grid".into()));
    }
    k.checked_mul(1usize << (l - 1)).ok_or_else(|| Error::InvalidParameter("doubling grid overflows".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingDistortion {
    pub l: usize,
    pub k: usize,
    /// `log(k·2^{l−1})`.
    pub r: f64,
    /// `7(1 − 4^{−l})/(9 l k²)`.
    pub d_derived: f64,
    /// `(7/l)·4^{l−2}(4^l − 1)e^{−2R}`, reported alongside for comparison.
    pub d_paper_printed: f64,
}

pub fn doubling_optimal_distortion(l: usize, k: usize) -> Result<DoublingDistortion> {
    let cells = doubling_cells(l, k)?;
    let (lf, kf) = (l as f64, k as f64);
    let r = (cells as f64).ln();
    let four_l = 4f64.powi(l as i32);
    Ok(DoublingDistortion {
        l,
        k,
        r,
        d_derived: 7.0 * (1.0 - 1.0 / four_l) / (9.0 * lf * kf * kf),
        d_paper_printed: 7.0 / lf * 4f64.powi(l as i32 - 2) * (four_l - 1.0) * (-2.0 * r).exp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingAchievability {
    pub closed_form: DoublingDistortion,
    pub cells: usize,
    pub transitions: usize,
    pub empirical: MeanEstimate,
    /// `|empirical − D_derived|` in units of the standard error.
    pub z_score: f64,
    pub passed: bool,
}

/// Exact abstraction on the uniform grid with `k·2^{l−1}` cells.
pub fn doubling_abstraction(l: usize, k: usize) -> Result<UniformGridAbstraction> {
    UniformGridAbstraction::build(&SystemDef::doubling(), vec![doubling_cells(l, k)?], BuildOptions::exact())
}

/// Monte Carlo distortion of the optimal abstraction against the closed form (3 standard errors).
pub fn doubling_optimal_abstraction(l: usize, k: usize, mc: McConfig) -> Result<DoublingAchievability> {
    let sys = SystemDef::doubling();
    let closed_form = doubling_optimal_distortion(l, k)?;
    let abs = doubling_abstraction(l, k)?;
    let empirical = expected_distortion(&sys, &abs.grid, &abs.transitions, l, mc)?;
    let z_score = (empirical.mean - closed_form.d_derived).abs() / empirical.stderr;
    Ok(DoublingAchievability {
        closed_form,
        cells: abs.grid.num_cells(),
        transitions: abs.transitions.num_transitions(),
        empirical,
        z_score,
        passed: z_score <= 3.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub l: usize,
    pub k: usize,
    pub r: f64,
    pub d_lower: f64,
    pub d_derived: f64,
    pub ratio: f64,
}

/// `(1/(6πe) + 1/12)/(7/36)`, the bound-to-optimum ratio with `s = ∞`, `c = v₁`.
pub fn doubling_ratio_constant() -> f64 {
    let (pi, e) = (std::f64::consts::PI, std::f64::consts::E);
    (1.0 / (6.0 * pi * e) + 1.0 / 12.0) / (7.0 / 36.0)
}

/// Ratio of the high-rate bound (`c = v₁`) to the optimal distortion at each `k`.
pub fn doubling_ratio_check(l: usize, ks: &[usize], s_grid: &[Order]) -> Result<Vec<RatioRow>> {
    let sys = SystemDef::doubling();
    let report = entropy_closed_form(&sys, l, &s_grid.iter().map(|s| s.0).collect::<Vec<_>>())?;
    let inputs = BoundInputs::from_report(&report, 1, unit_ball_volume(1), s_grid)?;
    ks.iter()
        .map(|&k| {
            let opt = doubling_optimal_distortion(l, k)?;
            let b = distortion_lower_bound(opt.r.max(f64::MIN_POSITIVE), &inputs)?;
            Ok(RatioRow {
                l,
                k,
                r: opt.r,
                d_lower: b.d_lower,
                d_derived: opt.d_derived,
                ratio: b.d_lower / opt.d_derived,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringRow {
    pub k: usize,
    pub cover_size: usize,
    pub s: Order,
    /// Lower estimate of `E[r_c(Ω_A)²]`: each `Ω_A` contains every one of its path boxes.
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Covering inequality on the cover of `B_l^S` induced by the optimal doubling abstraction.
pub fn doubling_covering_check(l: usize, k: usize, s_grid: &[Order]) -> Result<Vec<CoveringRow>> {
    let sys = SystemDef::doubling();
    let abs = doubling_abstraction(l, k)?;
    let cells = abs.grid.num_cells();
    let mut total = 0.0;
    for cell in 0..cells {
        let best = enumerate_paths(&abs.transitions, cell, l)
            .iter()
            .map(|p| {
                let boxes: Vec<_> = p.iter().map(|&c| abs.grid.cell(c)).collect();
                let r = chebyshev_of_product(&boxes).radius;
                r * r
            })
            .fold(0.0, f64::max);
        total += best / cells as f64;
    }
    let c = c_constant(&sys, l, CMode::Prop6, None)?.value;
    let report = entropy_closed_form(&sys, l, &s_grid.iter().map(|s| s.0).collect::<Vec<_>>())?;
    s_grid
        .iter()
        .map(|&s| {
            let hs = report.renyi_at(s.0).ok_or_else(|| Error::Internal("missing order".into()))?;
            let rhs = covering_lower_bound(c, 1, hs, s, cells);
            Ok(CoveringRow { k, cover_size: cells, s, lhs: total, rhs, holds: total >= rhs })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Nonlinear3dConfig {
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_l_grid")]
    pub l_grid: Vec<usize>,
    /// Samples for the expected distortion and inclusion check.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Samples for entropies and the Lipschitz estimate.
    #[serde(default = "default_entropy_samples")]
    pub entropy_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub workers: usize,
    #[serde(default = "default_cell_limit")]
    pub cell_limit: usize,
    #[serde(default = "crate::bounds::default_s_grid")]
    pub s_grid: Vec<Order>,
}

fn default_n_grid() -> Vec<usize> {
    vec![5, 10, 20]
}

fn default_l_grid() -> Vec<usize> {
    vec![2, 3, 4, 5]
}

fn default_samples() -> usize {
    2000
}

fn default_entropy_samples() -> usize {
    10_000
}

fn default_cell_limit() -> usize {
    DEFAULT_CELL_LIMIT
}

impl Default for Nonlinear3dConfig {
    fn default() -> Self {
        Self {
            n_grid: default_n_grid(),
            l_grid: default_l_grid(),
            samples: default_samples(),
            entropy_samples: default_entropy_samples(),
            seed: 0,
            workers: 0,
            cell_limit: DEFAULT_CELL_LIMIT,
            s_grid: crate::bounds::default_s_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinear3dRow {
    pub n_axis: usize,
    pub l: usize,
    pub cells: usize,
    pub r: f64,
    pub transitions: usize,
    pub d_empirical: f64,
    pub d_empirical_stderr: f64,
    pub inclusion_violations: usize,
    pub d_lower: f64,
    pub d_lower_highrate: f64,
    pub s_argmax: Order,
    pub h: f64,
    pub h_inf: f64,
    pub c: f64,
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinear3dResult {
    pub rows: Vec<Nonlinear3dRow>,
    pub bound_valid: bool,
    pub zero_violations: bool,
    pub monotone_in_n: bool,
}

impl Nonlinear3dResult {
    pub fn passed(&self) -> bool {
        self.bound_valid && self.zero_violations && self.monotone_in_n
    }
}

pub const NONLINEAR3D_CSV_HEADER: &str = "N,l,cells,R_nats,transitions,D_empirical,D_empirical_stderr,inclusion_violations,D_lower,D_lower_highrate,s_argmax,h,h_inf,c,L";

impl Nonlinear3dRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n_axis,
            self.l,
            self.cells,
            self.r,
            self.transitions,
            self.d_empirical,
            self.d_empirical_stderr,
            self.inclusion_violations,
            self.d_lower,
            self.d_lower_highrate,
            self.s_argmax,
            self.h,
            self.h_inf,
            self.c,
            self.lipschitz
        )
    }
}

/// Abstractions `A_N` of the 3-D benchmark on `N×N×N` grids against the lower bounds.
pub fn nonlinear3d_experiment(cfg: &Nonlinear3dConfig, mut progress: impl FnMut(&str)) -> Result<Nonlinear3dResult> {
    if cfg.n_grid.is_empty() || cfg.l_grid.is_empty() {
        return Err(Error::InvalidParameter("empty N or l grid".into()));
    }
    if let Some(&n) = cfg.n_grid.iter().find(|&&n| n.saturating_pow(3) > cfg.cell_limit) {
        return Err(Error::ResourceGuard { cells: n.saturating_pow(3), limit: cfg.cell_limit });
    }
    let sys = SystemDef::nonlinear3d();
    let base = McConfig { samples: cfg.samples, seed: cfg.seed, workers: cfg.workers };
    let ent_mc = McConfig { samples: cfg.entropy_samples, ..base }.derive(1);
    let lipschitz = sys.lipschitz_estimate(ent_mc.derive(2))?;
    let orders: Vec<f64> = cfg.s_grid.iter().map(|s| s.0).collect();

    let mut ingredients = Vec::new();
    for &l in &cfg.l_grid {
        let report = entropy_report_mc(&sys, l, &orders, ent_mc.derive(10 + l as u64))?;
        let c = c_constant(&sys, l, CMode::Prop6, Some(lipschitz))?.value;
        ingredients.push((l, BoundInputs::from_report(&report, 3, c, &cfg.s_grid)?));
    }

    let mut rows = Vec::new();
    for &n_axis in &cfg.n_grid {
        let opts = BuildOptions { cell_limit: cfg.cell_limit, workers: cfg.workers, ..BuildOptions::default() };
        let abs = UniformGridAbstraction::build(&sys, vec![n_axis; 3], opts)?;
        progress(&format!(
            "N={n_axis}: {} cells, {} transitions",
            abs.grid.num_cells(),
            abs.transitions.num_transitions()
        ));
        let r = (abs.grid.num_cells() as f64).ln();
        for (l, inputs) in &ingredients {
            let mc = base.derive(1000 + *l as u64);
            let emp = expected_distortion(&sys, &abs.grid, &abs.transitions, *l, mc)?;
            let violations = check_inclusion(&sys, &abs.grid, &abs.transitions, *l, mc.derive(3))?;
            let b = distortion_lower_bound(r, inputs)?;
            let high = BoundInputs { c: unit_ball_volume(3), ..inputs.clone() };
            let bh = distortion_lower_bound(r, &high)?;
            progress(&format!("N={n_axis} l={l}: D={:.5} ± {:.5}, bound {:.3e}", emp.mean, emp.stderr, b.d_lower));
            rows.push(Nonlinear3dRow {
                n_axis,
                l: *l,
                cells: abs.grid.num_cells(),
                r,
                transitions: abs.transitions.num_transitions(),
                d_empirical: emp.mean,
                d_empirical_stderr: emp.stderr,
                inclusion_violations: violations,
                d_lower: b.d_lower,
                d_lower_highrate: bh.d_lower,
                s_argmax: b.s_argmax,
                h: inputs.h,
                h_inf: inputs.renyi.iter().find(|(s, _)| s.is_infinite()).map_or(f64::NAN, |&(_, v)| v),
                c: inputs.c,
                lipschitz,
            });
        }
    }
    let bound_valid = rows.iter().all(|r| r.d_empirical >= r.d_lower && r.d_empirical >= r.d_lower_highrate);
    let zero_violations = rows.iter().all(|r| r.inclusion_violations == 0);
    let mut sorted_n = cfg.n_grid.clone();
    sorted_n.sort_unstable();
    let monotone_in_n = cfg.l_grid.iter().all(|&l| {
        let seq: Vec<&Nonlinear3dRow> =
            sorted_n.iter().filter_map(|&n| rows.iter().find(|r| r.n_axis == n && r.l == l)).collect();
        seq.windows(2).all(|w| {
            w[1].d_empirical <= w[0].d_empirical + 3.0 * w[0].d_empirical_stderr.hypot(w[1].d_empirical_stderr)
        })
    });
    Ok(Nonlinear3dResult { rows, bound_valid, zero_violations, monotone_in_n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_examples() {
        let d = doubling_optimal_distortion(5, 1).unwrap();
        assert_relative_eq!(d.d_derived, 0.15540364583333333, max_relative = 1e-14);
        assert_relative_eq!(d.r, 16f64.ln(), max_relative = 1e-15);
        let d1 = doubling_optimal_distortion(1, 1).unwrap();
        assert_relative_eq!(d1.d_derived, 7.0 / 12.0, max_relative = 1e-15);
        assert_relative_eq!(
            doubling_optimal_distortion(3, 2).unwrap().d_derived,
            0.06380208333333333,
            max_relative = 1e-14
        );
        assert!(doubling_optimal_distortion(4, 10_000).unwrap().d_derived < 1e-8);
        let p = doubling_optimal_distortion(3, 1).unwrap();
        assert_relative_eq!(p.d_paper_printed, 7.0 / 3.0 * 4.0 * 63.0 / 16.0, max_relative = 1e-14);
        for l in 1..6 {
            for k in [1, 3, 7] {
                let d = doubling_optimal_distortion(l, k).unwrap();
                let alt = 7.0 * (4f64.powi(l as i32) - 1.0) * (-2.0 * d.r).exp() / (36.0 * l as f64);
                assert_relative_eq!(d.d_derived, alt, max_relative = 1e-12);
            }
        }
        assert!(doubling_optimal_distortion(0, 1).is_err());
    }

    #[test]
    fn achievability_small() {
        for (l, k) in [(1, 1), (1, 3), (3, 1), (3, 2)] {
            let a = doubling_optimal_abstraction(l, k, McConfig::new(4000, 17)).unwrap();
            assert!(a.passed, "l={l} k={k}: {a:?}");
            assert_eq!(a.cells, k << (l - 1));
        }
    }

    #[test]
    fn ratio_is_constant() {
        let c = doubling_ratio_constant();
        assert_relative_eq!(c, 0.5289425683274043, max_relative = 1e-14);
        let ks: Vec<usize> = (1..=64).collect();
        for l in 2..=5 {
            for row in doubling_ratio_check(l, &ks, &[Order::INFINITY]).unwrap() {
                assert!((row.ratio - c).abs() < 1e-6, "{row:?}");
            }
        }
        let loose = doubling_ratio_check(5, &[1, 8], &[Order(2.0)]).unwrap();
        assert!(loose.iter().all(|r| r.ratio < c));
    }

    #[test]
    fn covering_inequality() {
        for k in [1, 2, 4, 8] {
            for row in doubling_covering_check(3, k, &[Order(2.0), Order::INFINITY]).unwrap() {
                assert!(row.holds, "{row:?}");
            }
        }
    }

    #[test]
    fn nonlinear3d_tiny() {
        let cfg = Nonlinear3dConfig {
            n_grid: vec![3, 6],
            l_grid: vec![2, 3],
            samples: 300,
            entropy_samples: 500,
            ..Nonlinear3dConfig::default()
        };
        let res = nonlinear3d_experiment(&cfg, |_| {}).unwrap();
        assert_eq!(res.rows.len(), 4);
        assert!(res.passed(), "{res:?}");
        assert!(res.rows.iter().all(|r| r.d_lower_highrate > r.d_lower));
        let guard = Nonlinear3dConfig { n_grid: vec![50], ..Nonlinear3dConfig::default() };
        assert_eq!(
            nonlinear3d_experiment(&guard, |_| {}).unwrap_err(),
            Error::ResourceGuard { cells: 125_000, limit: 100_000 }
        );
    }
}
