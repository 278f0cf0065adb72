//! The c-constant calculus, the Shannon-type lower bound on abstraction distortion, its rate
//! form, the relaxed initial-condition bounds and rate-distortion sweeps.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dynamics::{Smoothness, SystemDef};
use crate::entropy::EntropyReport;
use crate::error::{Error, Result};
use crate::geometry::{gamma_one_plus_half, unit_ball_volume};

/// Default maximization grid over Rényi orders.
pub const DEFAULT_S_GRID: [f64; 8] = [1.25, 1.5, 2.0, 3.0, 5.0, 10.0, 50.0, f64::INFINITY];

/// A Rényi order `s ∈ (1, ∞]`, serialized as a number or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Order(pub f64);

impl Order {
    pub const INFINITY: Order = Order(f64::INFINITY);

    pub fn new(s: f64) -> Result<Self> {
        if s > 1.0 {
            Ok(Order(s))
        } else {
            Err(Error::InvalidParameter(format!("Rényi order must lie in (1, ∞], got {s}")))
        }
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Order {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            ser.serialize_str("inf")
        } else {
            ser.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Order {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let s = match Raw::deserialize(de)? {
            Raw::Num(v) => v,
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "∞") => f64::INFINITY,
            Raw::Text(t) => return Err(serde::de::Error::custom(format!("invalid Rényi order `{t}`"))),
        };
        Order::new(s).map_err(serde::de::Error::custom)
    }
}

pub fn default_s_grid() -> Vec<Order> {
    DEFAULT_S_GRID.iter().map(|&s| Order(s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CMode {
    /// Smallest constant over every applicable structural case.
    #[default]
    Prop6,
    /// `c = v_n`, appropriate at high rates.
    HighRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CCase {
    Affine,
    PiecewiseAffine,
    Lipschitz,
    HighRate,
}

impl CCase {
    pub fn tag(self) -> &'static str {
        match self {
            CCase::Affine => "affine",
            CCase::PiecewiseAffine => "piecewise_affine",
            CCase::Lipschitz => "lipschitz",
            CCase::HighRate => "high_rate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CConstant {
    pub value: f64,
    pub case: CCase,
}

/// Upper bound on the c-constant of `B_l^S` for an `n`-dimensional system of the given class.
pub fn c_constant_for(
    n: usize,
    l: usize,
    smoothness: Smoothness,
    lipschitz: Option<f64>,
    mode: CMode,
) -> Result<CConstant> {
    if n == 0 || l == 0 {
        return Err(Error::InvalidParameter("n and l must be ≥ 1".into()));
    }
    let vn = unit_ball_volume(n);
    if mode == CMode::HighRate {
        return Ok(CConstant { value: vn, case: CCase::HighRate });
    }
    let mut cands = Vec::new();
    match smoothness {
        Smoothness::Affine => cands.push(CConstant { value: vn, case: CCase::Affine }),
        Smoothness::PiecewiseAffine { pieces } => {
            if pieces < 1 {
                return Err(Error::InvalidParameter("piecewise-affine systems need M ≥ 1".into()));
            }
            cands.push(CConstant { value: (pieces as f64).powi(l as i32) * vn, case: CCase::PiecewiseAffine });
        }
        Smoothness::Lipschitz => {
            if lipschitz.is_none() {
                return Err(Error::MissingLipschitz("the lipschitz smoothness class".into()));
            }
        }
    }
    if let Some(big_l) = lipschitz {
        if !(big_l.is_finite() && big_l >= 0.0) {
            return Err(Error::InvalidParameter(format!("Lipschitz constant must be finite and ≥ 0, got {big_l}")));
        }
        let series: f64 = (0..l).map(|i| big_l.powi(2 * i as i32)).sum();
        cands.push(CConstant { value: vn * series.powf(n as f64 / 2.0), case: CCase::Lipschitz });
    }
    let best = cands.into_iter().fold(None::<CConstant>, |acc, c| match acc {
        Some(a) if a.value <= c.value => Some(a),
        _ => Some(c),
    });
    best.filter(|c| c.value.is_finite()).ok_or_else(|| Error::NonFinite("c-constant".into()))
}

/// c-constant of `sys`, using `lipschitz` when the system has no known constant.
pub fn c_constant(sys: &SystemDef, l: usize, mode: CMode, lipschitz: Option<f64>) -> Result<CConstant> {
    c_constant_for(sys.dim(), l, sys.smoothness(), sys.lipschitz().or(lipschitz), mode)
}

/// Entropy ingredients of the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    pub l: usize,
    pub h: f64,
    /// `(s, h_s)` pairs; `s = ∞` carries `h_∞`.
    pub renyi: Vec<(Order, f64)>,
    pub c: f64,
}

impl BoundInputs {
    /// Ingredients from an entropy report restricted to `grid`.
    pub fn from_report(report: &EntropyReport, n: usize, c: f64, grid: &[Order]) -> Result<Self> {
        let renyi = grid
            .iter()
            .map(|&s| {
                report
                    .renyi_at(s.0)
                    .map(|v| (s, v))
                    .ok_or_else(|| Error::InvalidParameter(format!("entropy report lacks h_s for s = {s}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, l: report.l, h: report.h, renyi, c })
    }

    fn h_inf(&self) -> Result<f64> {
        self.renyi
            .iter()
            .find(|(s, _)| s.is_infinite())
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::InvalidParameter("the s-grid must contain ∞ for the rate bound".into()))
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.l == 0 {
            return Err(Error::InvalidParameter("n and l must be ≥ 1".into()));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::InvalidParameter(format!("c must be finite and positive, got {}", self.c)));
        }
        if !self.h.is_finite() || self.renyi.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite("entropy ingredient".into()));
        }
        if self.renyi.is_empty() {
            return Err(Error::InvalidParameter("empty s-grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct STerm {
    pub s: Order,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionBound {
    pub d_lower: f64,
    pub term1: f64,
    pub term2: f64,
    pub s_argmax: Order,
    pub terms: Vec<STerm>,
}

fn s_factor(s: Order) -> f64 {
    if s.is_infinite() {
        1.0
    } else {
        s.0 / (s.0 - 1.0)
    }
}

/// Lower bound on the expected distortion of any abstraction of rate `r` nats.
pub fn distortion_lower_bound(r: f64, inputs: &BoundInputs) -> Result<DistortionBound> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("rate must be positive, got {r}")));
    }
    inputs.validate()?;
    let n = inputs.n as f64;
    let l = inputs.l as f64;
    let log_c = inputs.c.ln();
    let log_gamma = gamma_one_plus_half(inputs.n).ln();
    let term1 = n / (2.0 * l) * ((2.0 / n) * (-r + inputs.h - n / 2.0 - log_c - log_gamma)).exp();
    let terms: Vec<STerm> = inputs
        .renyi
        .iter()
        .map(|&(s, hs)| STerm { s, value: ((2.0 / n) * (-s_factor(s) * r + hs - log_c)).exp() / l })
        .collect();
    let best = terms.iter().fold(terms[0], |a, t| if t.value > a.value { *t } else { a });
    let d_lower = term1 + best.value;
    if !d_lower.is_finite() {
        return Err(Error::NonFinite("distortion lower bound".into()));
    }
    Ok(DistortionBound { d_lower, term1, term2: best.value, s_argmax: best.s, terms })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub r_lower: f64,
    /// Unclamped value.
    pub raw: f64,
    pub vacuous: bool,
}

impl RateBound {
    fn from_raw(raw: f64) -> Self {
        if raw > 0.0 {
            Self { r_lower: raw, raw, vacuous: false }
        } else {
            Self { r_lower: 0.0, raw, vacuous: true }
        }
    }
}

/// Minimum rate for expected distortion at most `d`; the exact inverse of the `s = ∞` bound.
pub fn rate_lower_bound(d: f64, inputs: &BoundInputs) -> Result<RateBound> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidParameter(format!("distortion threshold must be positive, got {d}")));
    }
    inputs.validate()?;
    let n = inputs.n as f64;
    let l = inputs.l as f64;
    let h_inf = inputs.h_inf()?;
    let gamma = gamma_one_plus_half(inputs.n);
    let bracket = (n / 2.0) * ((2.0 / n) * inputs.h - 1.0).exp() / gamma.powf(2.0 / n) + ((2.0 / n) * h_inf).exp();
    let raw = (n / 2.0) * (bracket / (l * inputs.c.powf(2.0 / n))).ln() - (n / 2.0) * d.ln();
    Ok(RateBound::from_raw(raw))
}

/// Convention for `K(l)` when `f` is Lipschitz with `L = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitLipschitzK {
    /// `(1 − L²)/(l² v_n^{2/n})`, which is 0.
    #[default]
    Printed,
    /// `1/(l² v_n^{2/n})`.
    SeriesSum,
}

/// Dynamics class entering `K(l)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum RelaxedClass {
    Lipschitz { l_const: f64 },
    PiecewiseAffine { pieces: u32 },
}

impl RelaxedClass {
    pub fn for_system(sys: &SystemDef, lipschitz: Option<f64>) -> Result<Self> {
        match sys.smoothness() {
            Smoothness::PiecewiseAffine { pieces } => Ok(RelaxedClass::PiecewiseAffine { pieces }),
            _ => sys
                .lipschitz()
                .or(lipschitz)
                .map(|l_const| RelaxedClass::Lipschitz { l_const })
                .ok_or_else(|| Error::MissingLipschitz(sys.name().to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KCase {
    LipschitzBelowOne,
    LipschitzOne,
    LipschitzAboveOne,
    PiecewiseAffine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KValue {
    pub value: f64,
    pub case: KCase,
    pub note: Option<String>,
}

pub fn k_factor(class: RelaxedClass, n: usize, l: usize, unit: UnitLipschitzK) -> Result<KValue> {
    if n == 0 || l == 0 {
        return Err(Error::InvalidParameter("n and l must be ≥ 1".into()));
    }
    let (nf, lf) = (n as f64, l as f64);
    let vn = unit_ball_volume(n).powf(2.0 / nf);
    Ok(match class {
        RelaxedClass::Lipschitz { l_const } => {
            if !(l_const.is_finite() && l_const >= 0.0) {
                return Err(Error::InvalidParameter(format!("L must be finite and ≥ 0, got {l_const}")));
            }
            let one_minus = 1.0 - l_const * l_const;
            if l_const < 1.0 {
                KValue { value: one_minus / (lf * vn), case: KCase::LipschitzBelowOne, note: None }
            } else if l_const == 1.0 {
                match unit {
                    UnitLipschitzK::Printed => {
                        KValue { value: 0.0, case: KCase::LipschitzOne, note: Some("K=0 (1-L^2 vanishes)".into()) }
                    }
                    UnitLipschitzK::SeriesSum => KValue {
                        value: 1.0 / (lf * lf * vn),
                        case: KCase::LipschitzOne,
                        note: Some("series-sum convention 1/(l^2 v_n^(2/n))".into()),
                    },
                }
            } else {
                // (1 − L²) < 0 here; the magnitude (L² − 1) keeps the factor positive
                let value = -one_minus / (lf * l_const.powf(2.0 * lf) * vn);
                KValue { value, case: KCase::LipschitzAboveOne, note: Some("uses |1-L^2|".into()) }
            }
        }
        RelaxedClass::PiecewiseAffine { pieces } => {
            if pieces < 1 {
                return Err(Error::InvalidParameter("M must be ≥ 1".into()));
            }
            let value = 1.0 / (lf * (pieces as f64).powf(2.0 * lf / nf) * vn);
            KValue { value, case: KCase::PiecewiseAffine, note: None }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedBound {
    pub d_lower: f64,
    pub k: KValue,
    pub s_argmax: Order,
    pub rate: Option<RateBound>,
}

/// Entropies of the initial condition: `h(ξ0)` and `(s, h_s(ξ0))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialEntropies {
    pub n: usize,
    pub h0: f64,
    pub renyi0: Vec<(Order, f64)>,
}

impl InitialEntropies {
    /// Uniform initial distribution: every entropy equals `log vol`.
    pub fn uniform(n: usize, log_vol: f64, grid: &[Order]) -> Self {
        Self { n, h0: log_vol, renyi0: grid.iter().map(|&s| (s, log_vol)).collect() }
    }
}

/// Dynamics-free relaxed bound; `target_d` additionally yields the rate form.
pub fn relaxed_bound(
    class: RelaxedClass,
    l: usize,
    r: f64,
    init: &InitialEntropies,
    unit: UnitLipschitzK,
    target_d: Option<f64>,
) -> Result<RelaxedBound> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("rate must be positive, got {r}")));
    }
    if init.renyi0.is_empty() {
        return Err(Error::InvalidParameter("empty s-grid".into()));
    }
    let n = init.n as f64;
    let k = k_factor(class, init.n, l, unit)?;
    let gamma = gamma_one_plus_half(init.n);
    let first = (n / 2.0) * ((2.0 / n) * (-r + init.h0 - n / 2.0) - (2.0 / n) * gamma.ln()).exp();
    let (s_argmax, second) = init
        .renyi0
        .iter()
        .map(|&(s, hs)| (s, ((2.0 / n) * (-s_factor(s) * r + hs)).exp()))
        .fold((init.renyi0[0].0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let rate = match target_d {
        None => None,
        Some(d) => {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidParameter(format!("distortion threshold must be positive, got {d}")));
            }
            let h_inf0 = init
                .renyi0
                .iter()
                .find(|(s, _)| s.is_infinite())
                .map(|&(_, v)| v)
                .ok_or_else(|| Error::InvalidParameter("the s-grid must contain ∞ for the rate form".into()))?;
            let bracket =
                (n / 2.0) * ((2.0 / n) * init.h0 - 1.0).exp() / gamma.powf(2.0 / n) + ((2.0 / n) * h_inf0).exp();
            let raw = (n / 2.0) * (k.value * bracket).ln() - (n / 2.0) * d.ln();
            Some(RateBound::from_raw(if raw.is_nan() { f64::NEG_INFINITY } else { raw }))
        }
    };
    Ok(RelaxedBound { d_lower: k.value * (first + second), k, s_argmax, rate })
}

/// One row of a rate-distortion sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdRow {
    pub r_nats: f64,
    pub cells: f64,
    pub d_lower: f64,
    pub d_lower_highrate: f64,
    pub s_argmax: Order,
    pub term1: f64,
    pub term2: f64,
    pub h: f64,
    pub h_inf: f64,
    pub c: f64,
    pub c_case: CCase,
    pub terms: Vec<STerm>,
}

pub const RD_CSV_HEADER: &str = "R_nats,cells,D_lower,D_lower_highrate,s_argmax,term1,term2,h,h_inf,c,c_case";

impl RdRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.r_nats,
            self.cells,
            self.d_lower,
            self.d_lower_highrate,
            self.s_argmax,
            self.term1,
            self.term2,
            self.h,
            self.h_inf,
            self.c,
            self.c_case.tag()
        )
    }
}

/// Bound at every rate of an increasing grid, under both the structural and high-rate `c`.
pub fn rd_curve(inputs: &BoundInputs, c_case: CCase, r_grid: &[f64]) -> Result<Vec<RdRow>> {
    if r_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("R grid must be strictly increasing".into()));
    }
    let high = BoundInputs { c: unit_ball_volume(inputs.n), ..inputs.clone() };
    let h_inf = inputs.renyi.iter().find(|(s, _)| s.is_infinite()).map_or(f64::NAN, |&(_, v)| v);
    r_grid
        .iter()
        .map(|&r| {
            let b = distortion_lower_bound(r, inputs)?;
            let bh = distortion_lower_bound(r, &high)?;
            Ok(RdRow {
                r_nats: r,
                cells: round_near_integer(r.exp()),
                d_lower: b.d_lower,
                d_lower_highrate: bh.d_lower,
                s_argmax: b.s_argmax,
                term1: b.term1,
                term2: b.term2,
                h: inputs.h,
                h_inf,
                c: inputs.c,
                c_case,
                terms: b.terms,
            })
        })
        .collect()
}

fn round_near_integer(x: f64) -> f64 {
    if (x - x.round()).abs() <= 1e-9 * x.max(1.0) {
        x.round()
    } else {
        x
    }
}

/// Right-hand side of the covering inequality `E[r_c²] ≥ c^{−2/m} e^{(2/m)h_s} N^{−2/(m(1−1/s))}`.
pub fn covering_lower_bound(c: f64, m: usize, h_s: f64, s: Order, cover_size: usize) -> f64 {
    let m = m as f64;
    let exponent = if s.is_infinite() { -2.0 / m } else { -2.0 / (m * (1.0 - 1.0 / s.0)) };
    c.powf(-2.0 / m) * ((2.0 / m) * h_s).exp() * (cover_size as f64).powf(exponent)
}

/// Full bound report for one rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdBoundReport {
    pub n: usize,
    pub l: usize,
    pub r: f64,
    pub h: f64,
    pub renyi: Vec<(Order, f64)>,
    pub h_inf: f64,
    pub c: f64,
    pub c_case: CCase,
    pub c_mode: CMode,
    pub entropy_method: crate::entropy::Method,
    pub h_inf_estimator: String,
    pub bound: DistortionBound,
    pub rate_for_target: Option<(f64, RateBound)>,
    pub relaxed: Option<RelaxedBound>,
}
