//! System definitions, trajectories `b_l(ξ0)`, stacked Jacobian chains and Lipschitz estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exprdsl::{self, Dual, Expr, IntervalValue, Semantics};
use crate::geometry::{BoxRegion, Interval};
use crate::mc::{self, McConfig};

/// Declared regularity of `f`, which selects the applicable c-constant cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case", deny_unknown_fields)]
pub enum Smoothness {
    Affine,
    PiecewiseAffine { pieces: u32 },
    Lipschitz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub region: BoxRegion,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Serializable description of a system, as it appears in run configs and abstraction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// `x ↦ 2x mod 1` on `[0, 1]`.
    Doubling,
    /// `x ↦ x²` on `[0, 1]`.
    Square,
    /// `x ↦ x` on `[0, 1]^n` unless a domain is given.
    Identity {
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<BoxRegion>,
    },
    /// `x ↦ Ax` on `[-1, 1]^n` unless a domain is given.
    Lti {
        a: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<BoxRegion>,
    },
    /// The 3-D benchmark `(0.9x1 + 0.1 sin x2, 2x2³ − x2, 0.9x3 + 0.1x1x2)` on `[-1, 1]³`.
    Nonlinear3d,
    PiecewiseAffine {
        domain: BoxRegion,
        pieces: Vec<PieceSpec>,
    },
    /// Coordinates given as expressions over `x1..xn`.
    Expr {
        f: Vec<String>,
        domain: BoxRegion,
        smoothness: Smoothness,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct AffinePiece {
    pub region: BoxRegion,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone)]
enum Dynamics {
    Square,
    Linear(DMatrix<f64>),
    Nonlinear3d,
    Pieces(Vec<AffinePiece>),
    Exprs(Vec<Expr>),
}

/// A validated system `x⁺ = f(x)` on a box domain.
#[derive(Debug, Clone)]
pub struct SystemDef {
    spec: SystemSpec,
    name: String,
    n: usize,
    domain: BoxRegion,
    dynamics: Dynamics,
    smoothness: Smoothness,
    lipschitz: Option<f64>,
}

/// An `l`-step trajectory, optionally with the stacked Jacobian `[I; P1; …; P_{l−1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMatrix {
    pub states: Vec<Vec<f64>>,
    pub jacobian: Option<DMatrix<f64>>,
    /// Steps whose successor left the domain and was clamped back.
    pub escapes: usize,
}

impl TrajectoryMatrix {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// `ξ ∈ R^{n·l}` with time-major layout.
    pub fn flat(&self) -> Vec<f64> {
        self.states.iter().flatten().copied().collect()
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter(format!("{what} must be a non-empty square matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn nonlinear3d<S: Semantics>(x: &[S]) -> Vec<S> {
    let c = |v: f64| S::constant(v, &x[0]);
    let sin_x2 = x[1].apply(exprdsl::Func::Sin).expect("sin is total");
    let cube = x[1].powi(3).expect("integer power is total");
    vec![
        c(0.9).mul(&x[0]).add(&c(0.1).mul(&sin_x2)),
        c(2.0).mul(&cube).sub(&x[1]),
        c(0.9).mul(&x[2]).add(&c(0.1).mul(&x[0]).mul(&x[1])),
    ]
}

fn doubling_pieces() -> Vec<AffinePiece> {
    let piece = |lo: f64, hi: f64, b: f64| AffinePiece {
        region: BoxRegion::from_bounds(&[(lo, hi)]).expect("static bounds"),
        a: DMatrix::from_element(1, 1, 2.0),
        b: DVector::from_element(1, b),
    };
    vec![piece(0.0, 0.5, 0.0), piece(0.5, 1.0, -1.0)]
}

impl SystemDef {
    pub fn from_spec(spec: &SystemSpec) -> Result<Self> {
        let unit = |n| BoxRegion::cube(0.0, 1.0, n);
        let (name, domain, dynamics, smoothness, lipschitz) = match spec {
            SystemSpec::Doubling => (
                "doubling",
                unit(1)?,
                Dynamics::Pieces(doubling_pieces()),
                Smoothness::PiecewiseAffine { pieces: 2 },
                Some(2.0),
            ),
            SystemSpec::Square => ("square", unit(1)?, Dynamics::Square, Smoothness::Lipschitz, Some(2.0)),
            SystemSpec::Identity { n, domain } => {
                if *n == 0 {
                    return Err(Error::InvalidParameter("identity dimension must be ≥ 1".into()));
                }
                let domain = domain.clone().map_or_else(|| unit(*n), Ok)?;
                ("identity", domain, Dynamics::Linear(DMatrix::identity(*n, *n)), Smoothness::Affine, Some(1.0))
            }
            SystemSpec::Lti { a, domain } => {
                let a = matrix_from_rows(a, "lti matrix `a`")?;
                let n = a.nrows();
                let domain = domain.clone().map_or_else(|| BoxRegion::cube(-1.0, 1.0, n), Ok)?;
                let l = spectral_norm(&a);
                ("lti", domain, Dynamics::Linear(a), Smoothness::Affine, Some(l))
            }
            SystemSpec::Nonlinear3d => {
                ("nonlinear3d", BoxRegion::cube(-1.0, 1.0, 3)?, Dynamics::Nonlinear3d, Smoothness::Lipschitz, None)
            }
            SystemSpec::PiecewiseAffine { domain, pieces } => {
                if pieces.is_empty() {
                    return Err(Error::InvalidParameter("piecewise_affine needs at least one piece".into()));
                }
                let n = domain.dim();
                let mut out = Vec::with_capacity(pieces.len());
                for (k, p) in pieces.iter().enumerate() {
                    let a = matrix_from_rows(&p.a, &format!("pieces[{k}].a"))?;
                    if a.nrows() != n || p.b.len() != n || p.region.dim() != n {
                        return Err(Error::InvalidParameter(format!("pieces[{k}] does not match dimension {n}")));
                    }
                    out.push(AffinePiece { region: p.region.clone(), a, b: DVector::from_vec(p.b.clone()) });
                }
                let l = out.iter().map(|p| spectral_norm(&p.a)).fold(0.0, f64::max);
                let m = out.len() as u32;
                (
                    "piecewise_affine",
                    domain.clone(),
                    Dynamics::Pieces(out),
                    Smoothness::PiecewiseAffine { pieces: m },
                    Some(l),
                )
            }
            SystemSpec::Expr { f, domain, smoothness, lipschitz } => {
                let n = domain.dim();
                if f.len() != n {
                    return Err(Error::InvalidParameter(format!(
                        "expr system has {} coordinate functions for a {n}-dimensional domain",
                        f.len()
                    )));
                }
                if let Some(l) = lipschitz {
                    if !(l.is_finite() && *l >= 0.0) {
                        return Err(Error::InvalidParameter("lipschitz must be finite and ≥ 0".into()));
                    }
                }
                if let Smoothness::PiecewiseAffine { pieces } = smoothness {
                    if *pieces < 1 {
                        return Err(Error::InvalidParameter("piecewise_affine needs ≥ 1 piece".into()));
                    }
                }
                let exprs = f.iter().map(|s| exprdsl::parse(s, n)).collect::<Result<Vec<_>>>()?;
                ("expr", domain.clone(), Dynamics::Exprs(exprs), *smoothness, *lipschitz)
            }
        };
        if domain.axes().iter().any(|a| a.width() <= 0.0) {
            return Err(Error::InvalidParameter("domain axes must have positive width".into()));
        }
        Ok(Self {
            spec: spec.clone(),
            name: name.to_string(),
            n: domain.dim(),
            domain,
            dynamics,
            smoothness,
            lipschitz,
        })
    }

    pub fn doubling() -> Self {
        Self::from_spec(&SystemSpec::Doubling).expect("builtin")
    }

    pub fn square() -> Self {
        Self::from_spec(&SystemSpec::Square).expect("builtin")
    }

    pub fn identity(n: usize) -> Self {
        Self::from_spec(&SystemSpec::Identity { n, domain: None }).expect("builtin")
    }

    pub fn lti(a: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_spec(&SystemSpec::Lti { a, domain: None })
    }

    pub fn nonlinear3d() -> Self {
        Self::from_spec(&SystemSpec::Nonlinear3d).expect("builtin")
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn domain(&self) -> &BoxRegion {
        &self.domain
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// Known (closed-form or user-declared) Lipschitz constant.
    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.dynamics, Dynamics::Linear(_))
    }

    /// Affine pieces, when `f` is (piecewise) affine with a known decomposition.
    pub fn affine_pieces(&self) -> Option<Vec<AffinePiece>> {
        match &self.dynamics {
            Dynamics::Linear(a) => {
                Some(vec![AffinePiece { region: self.domain.clone(), a: a.clone(), b: DVector::zeros(self.n) }])
            }
            Dynamics::Pieces(p) => Some(p.clone()),
            _ => None,
        }
    }

    /// Stable identifier of the system definition, used to match cached abstractions.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.spec).expect("spec serializes");
        format!("{}:{:016x}", self.name, fnv1a(json.as_bytes()))
    }

    fn piece_at(&self, pieces: &[AffinePiece], x: &[f64]) -> Option<usize> {
        let half_open = |p: &AffinePiece| {
            p.region
                .axes()
                .iter()
                .zip(x)
                .zip(self.domain.axes())
                .all(|((r, &v), d)| r.lo() <= v && (v < r.hi() || (v == r.hi() && r.hi() >= d.hi())))
        };
        pieces.iter().position(half_open).or_else(|| pieces.iter().position(|p| p.region.contains(x)))
    }

    /// `f(x)` without domain handling.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: x.len() });
        }
        let y = match &self.dynamics {
            Dynamics::Square => vec![x[0] * x[0]],
            Dynamics::Linear(a) => (a * DVector::from_column_slice(x)).as_slice().to_vec(),
            Dynamics::Nonlinear3d => nonlinear3d(x),
            Dynamics::Pieces(pieces) => {
                let k = self.piece_at(pieces, x).ok_or_else(|| Error::OutsideDomain { point: x.to_vec() })?;
                let p = &pieces[k];
                (&p.a * DVector::from_column_slice(x) + &p.b).as_slice().to_vec()
            }
            Dynamics::Exprs(es) => es.iter().map(|e| e.eval_f64(x)).collect::<Result<Vec<_>>>()?,
        };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} at {x:?}", self.name)));
        }
        Ok(y)
    }

    /// One step of the dynamics; successors outside the domain are clamped onto it.
    /// Returns the successor and whether clamping happened beyond rounding tolerance.
    pub fn step_clamped(&self, x: &[f64]) -> Result<(Vec<f64>, bool)> {
        let mut y = self.eval(x)?;
        let before = y.clone();
        let moved = self.domain.clamp_in_place(&mut y);
        let escaped = moved && before.iter().zip(&y).any(|(a, b)| (a - b).abs() > 1e-12);
        if escaped {
            log::warn!("{}: successor {before:?} left the domain and was clamped", self.name);
        }
        Ok((y, escaped))
    }

    /// `f(x)`.
    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.step_clamped(x)?.0)
    }

    /// `J_f(x)`, closed form for built-ins and forward-mode AD for expressions.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.n;
        Ok(match &self.dynamics {
            Dynamics::Square => DMatrix::from_element(1, 1, 2.0 * x[0]),
            Dynamics::Linear(a) => a.clone(),
            Dynamics::Nonlinear3d => DMatrix::from_row_slice(
                3,
                3,
                &[0.9, 0.1 * x[1].cos(), 0.0, 0.0, 6.0 * x[1] * x[1] - 1.0, 0.0, 0.1 * x[1], 0.1 * x[0], 0.9],
            ),
            Dynamics::Pieces(pieces) => {
                let k = self.piece_at(pieces, x).ok_or_else(|| Error::OutsideDomain { point: x.to_vec() })?;
                pieces[k].a.clone()
            }
            Dynamics::Exprs(es) => {
                let env = Dual::seed_point(x);
                let mut j = DMatrix::zeros(n, n);
                for (r, e) in es.iter().enumerate() {
                    let d = e.eval(&env)?;
                    for c in 0..n {
                        j[(r, c)] = d.grad[c];
                    }
                }
                j
            }
        })
    }

    /// Interval enclosure of `f` over a closed box, as a union of boxes.
    ///
    /// A coordinate of the form `mod1(g)` is split at the integers crossed by the enclosure
    /// of `g`, so the enclosure is a union of wrapped pieces rather than `[0, 1]`.
    pub fn image(&self, cell: &BoxRegion) -> Result<Vec<BoxRegion>> {
        match &self.dynamics {
            Dynamics::Square => {
                let x = IntervalValue::from(cell.axis(0));
                Ok(vec![BoxRegion::new(vec![x.mul(&x).interval])?])
            }
            Dynamics::Linear(_) | Dynamics::Pieces(_) => {
                let pieces = self.affine_pieces().expect("affine");
                let mut out = Vec::new();
                for p in &pieces {
                    if let Some(part) = intersect_closed(cell, &p.region) {
                        out.push(affine_hull(&p.a, &p.b, &part)?);
                    }
                }
                if out.is_empty() {
                    return Err(Error::OutsideDomain { point: cell.center() });
                }
                Ok(out)
            }
            Dynamics::Nonlinear3d => {
                let env: Vec<IntervalValue> = cell.axes().iter().map(|&i| i.into()).collect();
                BoxRegion::new(nonlinear3d(&env).into_iter().map(|v| v.interval).collect()).map(|b| vec![b])
            }
            Dynamics::Exprs(es) => {
                let env: Vec<IntervalValue> = cell.axes().iter().map(|&i| i.into()).collect();
                let per_axis = es.iter().map(|e| wrapped_pieces(e, &env)).collect::<Result<Vec<_>>>()?;
                let mut out: Vec<Vec<Interval>> = vec![Vec::new()];
                for pieces in per_axis {
                    out = out
                        .into_iter()
                        .flat_map(|prefix| {
                            pieces.iter().map(move |&p| {
                                let mut v = prefix.clone();
                                v.push(p);
                                v
                            })
                        })
                        .collect();
                }
                out.into_iter().map(BoxRegion::new).collect()
            }
        }
    }

    /// `b_l(ξ0)`: the first `l` states of the trajectory.
    pub fn behavior(&self, x0: &[f64], l: usize) -> Result<TrajectoryMatrix> {
        if l == 0 {
            return Err(Error::InvalidParameter("horizon must be ≥ 1".into()));
        }
        self.check_start(x0)?;
        let mut states = Vec::with_capacity(l);
        let mut escapes = 0;
        states.push(x0.to_vec());
        for t in 1..l {
            let (y, escaped) = self.step_clamped(&states[t - 1])?;
            escapes += escaped as usize;
            states.push(y);
        }
        Ok(TrajectoryMatrix { states, jacobian: None, escapes })
    }

    /// Trajectory plus the stacked Jacobian of `b_l`, `P_{t+1} = J_f(x_t) P_t`, `P_0 = I`.
    pub fn jacobian_chain(&self, x0: &[f64], l: usize) -> Result<TrajectoryMatrix> {
        let mut traj = self.behavior(x0, l)?;
        let n = self.n;
        let mut stacked = DMatrix::zeros(n * l, n);
        let mut p = DMatrix::identity(n, n);
        stacked.view_mut((0, 0), (n, n)).copy_from(&p);
        for t in 1..l {
            p = self.jacobian(&traj.states[t - 1])? * p;
            stacked.view_mut((t * n, 0), (n, n)).copy_from(&p);
        }
        traj.jacobian = Some(stacked);
        Ok(traj)
    }

    fn check_start(&self, x0: &[f64]) -> Result<()> {
        if x0.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: x0.len() });
        }
        let inside = self.domain.axes().iter().zip(x0).all(|(a, &v)| v >= a.lo() - 1e-12 && v <= a.hi() + 1e-12);
        if !inside {
            return Err(Error::OutsideDomain { point: x0.to_vec() });
        }
        if !self.domain.contains(x0) {
            log::warn!("{}: initial state {x0:?} is marginally outside the domain", self.name);
        }
        Ok(())
    }

    /// Lipschitz constant: the known one if available, otherwise the largest spectral norm of
    /// `J_f` over uniform samples.
    pub fn lipschitz_estimate(&self, mc: McConfig) -> Result<f64> {
        if let Some(l) = self.lipschitz {
            return Ok(l);
        }
        self.sampled_jacobian_norm(mc)
    }

    /// Largest sampled `‖J_f(x)‖₂`, ignoring any declared constant.
    pub fn sampled_jacobian_norm(&self, mc: McConfig) -> Result<f64> {
        if mc.samples == 0 {
            return Err(Error::InvalidParameter("samples must be ≥ 1".into()));
        }
        let norms = mc::par_collect(mc.samples, mc.workers, |i| {
            let x = mc::uniform_in(&mut mc::stream(mc.seed, i as u64), &self.domain);
            self.jacobian(&x).map(|j| spectral_norm(&j))
        });
        norms.into_iter().try_fold(0.0f64, |acc, v| Ok(acc.max(v?)))
    }
}

/// Enclosure of one coordinate; a top-level `mod1` yields one piece per integer crossed.
fn wrapped_pieces(e: &Expr, env: &[IntervalValue]) -> Result<Vec<Interval>> {
    const MAX_WRAPS: f64 = 8.0;
    if let Expr::Call(exprdsl::Func::Mod1, inner) = e {
        let g = inner.eval(env)?.interval;
        let (first, last) = (g.lo().floor(), g.hi().floor());
        if last - first <= MAX_WRAPS {
            let mut k = first;
            let mut out = Vec::new();
            while k <= last {
                let lo = if k == first { g.lo() - k } else { 0.0 };
                let hi = if k == last { g.hi() - k } else { 1.0 };
                out.push(Interval::hull_of(lo, hi));
                k += 1.0;
            }
            return Ok(out);
        }
    }
    Ok(vec![e.eval(env)?.interval])
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn intersect_closed(a: &BoxRegion, b: &BoxRegion) -> Option<BoxRegion> {
    let axes: Option<Vec<Interval>> = a
        .axes()
        .iter()
        .zip(b.axes())
        .map(|(x, y)| {
            let lo = x.lo().max(y.lo());
            let hi = x.hi().min(y.hi());
            (lo <= hi).then(|| Interval::hull_of(lo, hi))
        })
        .collect();
    axes.and_then(|v| BoxRegion::new(v).ok())
}

/// Bounding box of `{Ax + b : x ∈ box}`, which is exact per coordinate.
pub(crate) fn affine_hull(a: &DMatrix<f64>, b: &DVector<f64>, x: &BoxRegion) -> Result<BoxRegion> {
    let n = a.nrows();
    let axes = (0..n)
        .map(|r| {
            let (mut lo, mut hi) = (b[r], b[r]);
            for c in 0..a.ncols() {
                let (p, q) = (a[(r, c)] * x.axis(c).lo(), a[(r, c)] * x.axis(c).hi());
                lo += p.min(q);
                hi += p.max(q);
            }
            Interval::hull_of(lo, hi)
        })
        .collect();
    BoxRegion::new(axes)
}

/// Spectral norm by power iteration on `AᵀA` to a relative tolerance of 1e-10.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let m = a.transpose() * a;
    let n = m.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = &m * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

/// `log det(JᵀJ)` through a Cholesky factorization.
pub fn log_det_gram(j: &DMatrix<f64>) -> Result<f64> {
    let gram = j.transpose() * j;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Internal("JᵀJ is not positive definite (stacked Jacobian lost rank)".into()))?;
    let l = chol.l();
    Ok(2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_examples() {
        assert_relative_eq!(SystemDef::doubling().step(&[0.3]).unwrap()[0], 0.6);
        assert_relative_eq!(SystemDef::square().step(&[0.7]).unwrap()[0], 0.49, epsilon = 1e-15);
        let zero = SystemDef::lti(vec![vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(zero.step(&[0.4, -0.2]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn behavior_examples() {
        let t = SystemDef::doubling().behavior(&[0.3], 3).unwrap();
        assert_relative_eq!(t.states[0][0], 0.3);
        assert_relative_eq!(t.states[1][0], 0.6);
        assert_relative_eq!(t.states[2][0], 0.2, epsilon = 1e-15);
        assert_eq!(SystemDef::nonlinear3d().behavior(&[0.1, 0.2, 0.3], 1).unwrap().states, vec![vec![0.1, 0.2, 0.3]]);
        let s = SystemDef::square().behavior(&[0.7], 2).unwrap();
        assert_relative_eq!(s.states[1][0], 0.49, epsilon = 1e-15);
        assert!(SystemDef::square().behavior(&[0.7], 0).is_err());
        assert!(SystemDef::square().behavior(&[1.5], 2).is_err());
    }

    #[test]
    fn doubling_chain() {
        let t = SystemDef::doubling().jacobian_chain(&[0.3], 3).unwrap();
        let j = t.jacobian.unwrap();
        assert_eq!(j.as_slice(), &[1.0, 2.0, 4.0]);
        assert_relative_eq!((j.transpose() * &j).determinant(), 21.0);
        assert_relative_eq!(log_det_gram(&j).unwrap(), 21f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn identity_chain() {
        for n in 1..4 {
            for l in 1..6 {
                let x0 = vec![0.5; n];
                let j = SystemDef::identity(n).jacobian_chain(&x0, l).unwrap().jacobian.unwrap();
                assert_relative_eq!(
                    (j.transpose() * &j).determinant(),
                    (l as f64).powi(n as i32),
                    max_relative = 1e-12
                );
            }
        }
        let j = SystemDef::identity(2).jacobian_chain(&[0.1, 0.2], 5).unwrap().jacobian.unwrap();
        assert_relative_eq!(log_det_gram(&j).unwrap(), 2.0 * 5f64.ln(), max_relative = 1e-14);
        let j1 = SystemDef::identity(3).jacobian_chain(&[0.1, 0.2, 0.3], 1).unwrap().jacobian.unwrap();
        assert_eq!(log_det_gram(&j1).unwrap(), 0.0);
    }

    #[test]
    fn square_chain_matches_finite_differences() {
        let sys = SystemDef::square();
        let j = sys.jacobian_chain(&[0.5], 2).unwrap().jacobian.unwrap();
        let h = 1e-6;
        let fd = (sys.behavior(&[0.5 + h], 2).unwrap().states[1][0]
            - sys.behavior(&[0.5 - h], 2).unwrap().states[1][0])
            / (2.0 * h);
        assert_relative_eq!(j[(1, 0)], fd, max_relative = 1e-8);
        assert_relative_eq!((j.transpose() * &j).determinant(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn lipschitz_examples() {
        let a = vec![vec![0.5, 0.3], vec![-0.2, 0.4]];
        let sys = SystemDef::lti(a.clone()).unwrap();
        let svd = DMatrix::from_fn(2, 2, |i, j| a[i][j]).svd(false, false);
        let exact = svd.singular_values.max();
        assert_relative_eq!(sys.lipschitz_estimate(McConfig::new(3, 1)).unwrap(), exact, max_relative = 1e-9);
        assert_relative_eq!(sys.sampled_jacobian_norm(McConfig::new(3, 1)).unwrap(), exact, max_relative = 1e-9);
        assert_eq!(SystemDef::doubling().sampled_jacobian_norm(McConfig::new(50, 2)).unwrap(), 2.0);
        let sq = SystemDef::square();
        let few = sq.sampled_jacobian_norm(McConfig::new(10, 3)).unwrap();
        let many = sq.sampled_jacobian_norm(McConfig::new(10_000, 3)).unwrap();
        assert!(few <= many && many <= 2.0 && many > 1.999);
    }

    #[test]
    fn det_gram_at_least_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let systems = [
            SystemDef::doubling(),
            SystemDef::square(),
            SystemDef::nonlinear3d(),
            SystemDef::lti(vec![vec![0.5, 0.1], vec![0.0, -0.7]]).unwrap(),
        ];
        for sys in &systems {
            for _ in 0..300 {
                let x = mc::uniform_in(&mut rng, sys.domain());
                let l = rng.gen_range(1..7);
                let j = sys.jacobian_chain(&x, l).unwrap().jacobian.unwrap();
                assert!(log_det_gram(&j).unwrap() >= -1e-12);
            }
        }
    }

    #[test]
    fn schur_gram_closed_form() {
        let rows = vec![vec![0.5, 0.2], vec![0.2, -0.6]];
        let a = DMatrix::from_fn(2, 2, |i, j| rows[i][j]);
        let sys = SystemDef::lti(rows).unwrap();
        let ata = a.transpose() * &a;
        let id = DMatrix::<f64>::identity(2, 2);
        for l in [1usize, 2, 5, 12] {
            let j = sys.jacobian_chain(&[0.3, 0.3], l).unwrap().jacobian.unwrap();
            let gram = j.transpose() * &j;
            let closed = (&id - &ata).try_inverse().unwrap() * (&id - ata.pow(l as u32));
            assert!((gram - closed).abs().max() < 1e-8);
        }
    }

    #[test]
    fn non_normal_gram_is_power_sum() {
        let rows = vec![vec![0.5, 0.4], vec![0.0, 0.3]];
        let a = DMatrix::from_fn(2, 2, |i, j| rows[i][j]);
        let sys = SystemDef::lti(rows).unwrap();
        let l = 6;
        let j = sys.jacobian_chain(&[0.1, -0.2], l).unwrap().jacobian.unwrap();
        let sum = (0..l as u32).fold(DMatrix::zeros(2, 2), |acc, i| {
            let p = a.pow(i);
            acc + p.transpose() * p
        });
        assert!((j.transpose() * &j - sum).abs().max() < 1e-12);
    }

    #[test]
    fn nonlinear3d_forward_invariant() {
        let sys = SystemDef::nonlinear3d();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let x = mc::uniform_in(&mut rng, sys.domain());
            let y = sys.eval(&x).unwrap();
            assert!(sys.domain().contains(&y), "{x:?} -> {y:?}");
        }
    }

    #[test]
    fn chain_matches_central_differences() {
        let dsl = SystemDef::from_spec(&SystemSpec::Expr {
            f: vec!["0.9*x1 + 0.1*sin(x2)".into(), "2*x2^3 - x2".into(), "0.9*x3 + 0.1*x1*x2".into()],
            domain: BoxRegion::cube(-1.0, 1.0, 3).unwrap(),
            smoothness: Smoothness::Lipschitz,
            lipschitz: None,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for sys in [SystemDef::nonlinear3d(), dsl] {
            for _ in 0..100 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.7..0.7)).collect();
                let l = 4;
                let j = sys.jacobian_chain(&x, l).unwrap().jacobian.unwrap();
                for c in 0..3 {
                    let h = 1e-6;
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[c] += h;
                    b[c] -= h;
                    let fa = sys.behavior(&a, l).unwrap().flat();
                    let fb = sys.behavior(&b, l).unwrap().flat();
                    for r in 0..3 * l {
                        let fd = (fa[r] - fb[r]) / (2.0 * h);
                        let scale = j[(r, c)].abs().max(1.0);
                        assert!((fd - j[(r, c)]).abs() / scale < 1e-5, "row {r} col {c}: {} vs {fd}", j[(r, c)]);
                    }
                }
            }
        }
    }

    #[test]
    fn dsl_and_builtin_agree() {
        let dsl = SystemDef::from_spec(&SystemSpec::Expr {
            f: vec!["mod1(2*x1)".into()],
            domain: BoxRegion::cube(0.0, 1.0, 1).unwrap(),
            smoothness: Smoothness::PiecewiseAffine { pieces: 2 },
            lipschitz: Some(2.0),
        })
        .unwrap();
        let b = SystemDef::doubling();
        for x in [0.1, 0.3, 0.49, 0.51, 0.8] {
            assert_relative_eq!(dsl.step(&[x]).unwrap()[0], b.step(&[x]).unwrap()[0], epsilon = 1e-15);
            assert_eq!(dsl.jacobian(&[x]).unwrap()[(0, 0)], 2.0);
        }
    }

    #[test]
    fn escapes_are_clamped_and_counted() {
        let sys = SystemDef::lti(vec![vec![3.0]]).unwrap();
        let t = sys.behavior(&[0.9], 3).unwrap();
        assert_eq!(t.states[1], vec![1.0]);
        assert_eq!(t.escapes, 2);
    }

    #[test]
    fn spec_validation() {
        assert!(SystemDef::lti(vec![vec![1.0, 2.0]]).is_err());
        assert!(SystemDef::from_spec(&SystemSpec::Identity { n: 0, domain: None }).is_err());
        let bad = SystemSpec::Expr {
            f: vec!["x1".into()],
            domain: BoxRegion::cube(0.0, 1.0, 2).unwrap(),
            smoothness: Smoothness::Affine,
            lipschitz: None,
        };
        assert!(matches!(SystemDef::from_spec(&bad), Err(Error::InvalidParameter(_))));
        let json = r#"{"kind": "lti", "a": [[0.5]], "typo": 1}"#;
        assert!(serde_json::from_str::<SystemSpec>(json).is_err());
        let ok: SystemSpec = serde_json::from_str(r#"{"kind": "identity", "n": 2}"#).unwrap();
        assert_eq!(SystemDef::from_spec(&ok).unwrap().dim(), 2);
    }
}
