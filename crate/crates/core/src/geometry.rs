//! Intervals, axis-aligned boxes and the Chebyshev quantities of boxes.
//!
//! Boxes are the only sets the rest of the crate ever needs: partition cells,
//! abstraction outputs (products of cells along a path) and the state domain
//! are all boxes or finite unions of them.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Closed scalar interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Hull of two bounds given in either order.
    pub fn hull_of(a: f64, b: f64) -> Self {
        Self { lo: a.min(b), hi: a.max(b) }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    #[inline]
    pub fn radius(&self) -> f64 {
        0.5 * self.width()
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    /// Closed-set intersection test.
    pub fn intersects(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    /// Largest squared distance from `x` to a point of the interval.
    #[inline]
    pub fn sup_sq_dist(&self, x: f64) -> f64 {
        let d = (x - self.lo).abs().max((x - self.hi).abs());
        d * d
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Axis-aligned box, one interval per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Interval>", into = "Vec<Interval>")]
pub struct BoxRegion {
    axes: Vec<Interval>,
}

impl BoxRegion {
    pub fn new(axes: Vec<Interval>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::EmptyBox);
        }
        Ok(Self { axes })
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        let axes = bounds.iter().map(|&(lo, hi)| Interval::new(lo, hi)).collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    /// `[lo, hi]^dim`.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::new(vec![Interval::new(lo, hi)?; dim])
    }

    pub fn point(p: &[f64]) -> Result<Self> {
        Self::new(p.iter().map(|&x| Interval::point(x)).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    #[inline]
    pub fn axes(&self) -> &[Interval] {
        &self.axes
    }

    #[inline]
    pub fn axis(&self, i: usize) -> Interval {
        self.axes[i]
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(Interval::width).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.axes.iter().map(Interval::mid).collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && self.axes.iter().zip(p).all(|(i, &x)| i.contains(x))
    }

    pub fn intersects(&self, other: &BoxRegion) -> bool {
        self.dim() == other.dim() && self.axes.iter().zip(&other.axes).all(|(a, b)| a.intersects(b))
    }

    pub fn hull(&self, other: &BoxRegion) -> Result<BoxRegion> {
        check_dim(self.dim(), other.dim())?;
        Ok(BoxRegion { axes: self.axes.iter().zip(&other.axes).map(|(a, b)| a.hull(b)).collect() })
    }

    /// Clamp a point into the box; returns whether any coordinate moved.
    pub fn clamp_in_place(&self, p: &mut [f64]) -> bool {
        let mut moved = false;
        for (x, i) in p.iter_mut().zip(&self.axes) {
            let c = i.clamp(*x);
            if c != *x {
                *x = c;
                moved = true;
            }
        }
        moved
    }

    /// Every vertex of the box, in binary counting order over the axes.
    pub fn vertices(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let d = self.dim();
        (0u64..(1u64 << d)).map(move |mask| {
            (0..d).map(|i| if mask >> i & 1 == 0 { self.axes[i].lo } else { self.axes[i].hi }).collect()
        })
    }

    /// Bisect along the widest axis.
    pub fn bisect(&self) -> (BoxRegion, BoxRegion) {
        let (axis, _) = self.axes.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, a)| {
            if a.width() > acc.1 {
                (i, a.width())
            } else {
                acc
            }
        });
        let mid = self.axes[axis].mid();
        let mut left = self.axes.clone();
        let mut right = self.axes.clone();
        left[axis] = Interval { lo: self.axes[axis].lo, hi: mid };
        right[axis] = Interval { lo: mid, hi: self.axes[axis].hi };
        (BoxRegion { axes: left }, BoxRegion { axes: right })
    }
}

impl TryFrom<Vec<Interval>> for BoxRegion {
    type Error = Error;

    fn try_from(v: Vec<Interval>) -> Result<Self> {
        BoxRegion::new(v)
    }
}

impl From<BoxRegion> for Vec<Interval> {
    fn from(b: BoxRegion) -> Self {
        b.axes
    }
}

/// Chebyshev center and radius of a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevData {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// For a box the Chebyshev ball is centred at the midpoint with the half-diagonal as radius.
pub fn chebyshev_of_box(b: &BoxRegion) -> ChebyshevData {
    let radius = b.axes.iter().map(|a| a.radius() * a.radius()).sum::<f64>().sqrt();
    ChebyshevData { center: b.center(), radius }
}

/// Chebyshev data of a product of boxes (e.g. a cell path in `X^l`), concatenating coordinates.
pub fn chebyshev_of_product(boxes: &[BoxRegion]) -> ChebyshevData {
    let mut center = Vec::new();
    let mut r2 = 0.0;
    for b in boxes {
        center.extend(b.center());
        r2 += b.axes.iter().map(|a| a.radius() * a.radius()).sum::<f64>();
    }
    ChebyshevData { center, radius: r2.sqrt() }
}

/// `sup_{y ∈ b} ‖p − y‖²`, attained at the farthest vertex.
pub fn sup_sq_dist(point: &[f64], b: &BoxRegion) -> Result<f64> {
    check_dim(point.len(), b.dim())?;
    Ok(b.axes.iter().zip(point).map(|(a, &x)| a.sup_sq_dist(x)).sum())
}

/// Farthest-point squared distance to a finite union of boxes.
pub fn sup_sq_dist_union(point: &[f64], boxes: &[BoxRegion]) -> Result<f64> {
    boxes.iter().try_fold(f64::NEG_INFINITY, |acc, b| Ok(acc.max(sup_sq_dist(point, b)?)))
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `Γ(1 + n/2)` from factorials and double factorials, exact up to rounding.
pub fn gamma_one_plus_half(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        // Γ(k+1) = k!
        (1..=n / 2).map(|k| k as f64).product()
    } else {
        // Γ(k + 3/2) = (2k+1)!! √π / 2^{k+1}, with n = 2k+1
        let k = (n - 1) / 2;
        let double_fact: f64 = (0..=k).map(|j| (2 * j + 1) as f64).product();
        double_fact * PI.sqrt() / 2f64.powi(k as i32 + 1)
    }
}

/// Volume of the Euclidean unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    assert!(n >= 1, "unit ball dimension must be positive");
    PI.powf(n as f64 / 2.0) / gamma_one_plus_half(n)
}
