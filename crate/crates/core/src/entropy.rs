//! Trajectory entropies of `ξ = b_l(ξ0)` for `ξ0` uniform on the domain.
//!
//! With `ld(x) = log det(J_{b_l}(x)ᵀ J_{b_l}(x))`:
//!
//! * `h = log vol + ½ E[ld]`
//! * `h_s = log vol + log E[exp(−(s−1)/2 · ld)] / (1 − s)`
//! * `h_∞ = log vol + ½ ess inf ld`
//!
//! All values are in nats.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{log_det_gram, SystemDef, SystemSpec};
use crate::error::{Error, Result};
use crate::mc::{self, McConfig};

/// Default Rényi orders for reports; `∞` is always added separately.
pub const DEFAULT_RENYI_ORDERS: [f64; 7] = [1.25, 1.5, 2.0, 3.0, 5.0, 10.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenyiEntry {
    pub s: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub system: String,
    pub l: usize,
    /// `h(ξ0) = h_s(ξ0) = log vol(X)`.
    pub h0: f64,
    pub h: f64,
    pub stderr_h: f64,
    pub renyi: Vec<RenyiEntry>,
    pub h_inf: f64,
    /// How `h_inf` was obtained.
    pub h_inf_estimator: String,
    pub method: Method,
    pub samples: usize,
    pub seed: u64,
    /// Trajectory steps clamped back onto the domain across all samples.
    pub escapes: usize,
}

impl EntropyReport {
    /// `h_s` for a finite order in the report, or `h_∞` for `s = ∞`.
    pub fn renyi_at(&self, s: f64) -> Option<f64> {
        if s.is_infinite() {
            return Some(self.h_inf);
        }
        self.renyi.iter().find(|e| e.s == s).map(|e| e.value)
    }

    /// `(s, h_s)` for every finite order followed by `(∞, h_∞)`.
    pub fn renyi_grid(&self) -> Vec<(f64, f64)> {
        self.renyi.iter().map(|e| (e.s, e.value)).chain(std::iter::once((f64::INFINITY, self.h_inf))).collect()
    }

    /// Report in bits instead of nats.
    pub fn to_bits(&self) -> Self {
        let k = std::f64::consts::LN_2;
        Self {
            h0: self.h0 / k,
            h: self.h / k,
            stderr_h: self.stderr_h / k,
            renyi: self.renyi.iter().map(|e| RenyiEntry { s: e.s, value: e.value / k, stderr: e.stderr / k }).collect(),
            h_inf: self.h_inf / k,
            ..self.clone()
        }
    }
}

pub fn log_volume(sys: &SystemDef) -> f64 {
    sys.domain().axes().iter().map(|a| a.width().ln()).sum()
}

/// Per-sample `ld(ξ0)` values together with the total escape count.
pub fn log_det_samples(sys: &SystemDef, l: usize, mc: McConfig) -> Result<(Vec<f64>, usize)> {
    if mc.samples < 2 {
        return Err(Error::InvalidParameter("entropy estimates need at least 2 samples".into()));
    }
    let out = mc::par_collect(mc.samples, mc.workers, |i| {
        let x0 = mc::uniform_in(&mut mc::stream(mc.seed, i as u64), sys.domain());
        let t = sys.jacobian_chain(&x0, l)?;
        Ok::<_, Error>((log_det_gram(t.jacobian.as_ref().expect("chain has a Jacobian"))?, t.escapes))
    });
    let mut lds = Vec::with_capacity(out.len());
    let mut escapes = 0;
    for r in out {
        let (ld, e) = r?;
        lds.push(ld);
        escapes += e;
    }
    Ok((lds, escapes))
}

fn shannon(log_vol: f64, lds: &[f64]) -> Estimate {
    let m = mc::mean_stderr(lds);
    Estimate { value: log_vol + 0.5 * m.mean, stderr: 0.5 * m.stderr }
}

fn renyi(log_vol: f64, lds: &[f64], s: f64) -> Result<Estimate> {
    if !(s > 1.0) || s.is_infinite() {
        return Err(Error::InvalidParameter(format!("Rényi order must be finite and > 1, got {s}")));
    }
    let a = -(s - 1.0) / 2.0;
    let shift = lds.iter().map(|ld| a * ld).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lds.iter().map(|ld| (a * ld - shift).exp()).collect();
    let m = mc::mean_stderr(&w);
    let log_mean = m.mean.ln() + shift;
    Ok(Estimate { value: log_vol + log_mean / (1.0 - s), stderr: m.stderr / m.mean / (s - 1.0) })
}

fn ess_inf(log_vol: f64, lds: &[f64]) -> f64 {
    log_vol + 0.5 * lds.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Monte Carlo `h(ξ)` with its standard error.
pub fn entropy_mc(sys: &SystemDef, l: usize, mc: McConfig) -> Result<Estimate> {
    let (lds, _) = log_det_samples(sys, l, mc)?;
    Ok(shannon(log_volume(sys), &lds))
}

/// Monte Carlo `h_s(ξ)` for finite `s > 1`, standard error by the delta method.
pub fn renyi_mc(sys: &SystemDef, l: usize, s: f64, mc: McConfig) -> Result<Estimate> {
    if !(s > 1.0) || s.is_infinite() {
        return Err(Error::InvalidParameter(format!("Rényi order must be finite and > 1, got {s}")));
    }
    let (lds, _) = log_det_samples(sys, l, mc)?;
    renyi(log_volume(sys), &lds, s)
}

/// `h_∞(ξ)` from the smallest sampled `ld`, an upper estimate of the essential infimum.
pub fn renyi_sup(sys: &SystemDef, l: usize, mc: McConfig) -> Result<f64> {
    let (lds, _) = log_det_samples(sys, l, mc)?;
    Ok(ess_inf(log_volume(sys), &lds))
}

/// `ld` for systems where it is the same at every initial state.
fn constant_log_det(sys: &SystemDef, l: usize) -> Option<f64> {
    let n = sys.dim() as f64;
    match sys.spec() {
        SystemSpec::Doubling => Some((4f64.powi(l as i32) - 1.0).ln() - 3f64.ln()),
        SystemSpec::Identity { .. } => Some(n * (l as f64).ln()),
        SystemSpec::Lti { a, .. } => {
            let a = DMatrix::from_fn(a.len(), a.len(), |i, j| a[i][j]);
            let mut p = DMatrix::identity(a.nrows(), a.nrows());
            let mut gram = DMatrix::zeros(a.nrows(), a.nrows());
            for _ in 0..l {
                gram += p.transpose() * &p;
                p = &a * p;
            }
            gram.cholesky().map(|c| 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
        }
        _ => None,
    }
}

/// Exact entropies for doubling, identity and LTI systems, whose `ld` is constant.
pub fn entropy_closed_form(sys: &SystemDef, l: usize, orders: &[f64]) -> Result<EntropyReport> {
    if l == 0 {
        return Err(Error::InvalidParameter("horizon must be ≥ 1".into()));
    }
    let ld = constant_log_det(sys, l)
        .ok_or_else(|| Error::KindMismatch(format!("no closed-form entropy for `{}`", sys.name())))?;
    let h0 = log_volume(sys);
    let h = h0 + 0.5 * ld;
    Ok(EntropyReport {
        system: sys.fingerprint(),
        l,
        h0,
        h,
        stderr_h: 0.0,
        renyi: orders.iter().filter(|s| s.is_finite()).map(|&s| RenyiEntry { s, value: h, stderr: 0.0 }).collect(),
        h_inf: h,
        h_inf_estimator: "closed form (constant determinant)".into(),
        method: Method::ClosedForm,
        samples: 0,
        seed: 0,
        escapes: 0,
    })
}

/// Monte Carlo report over the given finite orders.
pub fn entropy_report_mc(sys: &SystemDef, l: usize, orders: &[f64], mc: McConfig) -> Result<EntropyReport> {
    let (lds, escapes) = log_det_samples(sys, l, mc)?;
    let h0 = log_volume(sys);
    let sh = shannon(h0, &lds);
    let renyi = orders
        .iter()
        .filter(|s| s.is_finite())
        .map(|&s| renyi(h0, &lds, s).map(|e| RenyiEntry { s, value: e.value, stderr: e.stderr }))
        .collect::<Result<Vec<_>>>()?;
    let (h_inf, h_inf_estimator) = match sys.spec() {
        // det(JᵀJ) = 1 + Σ_t (∏ 2x_s)² is increasing in ξ0 ≥ 0, so its infimum is 1 at ξ0 = 0
        SystemSpec::Square => (h0, "closed form (infimum at x = 0)".to_string()),
        _ => (ess_inf(h0, &lds), "sample minimum (upper estimate of the essential infimum)".to_string()),
    };
    let report = EntropyReport {
        system: sys.fingerprint(),
        l,
        h0,
        h: sh.value,
        stderr_h: sh.stderr,
        renyi,
        h_inf,
        h_inf_estimator,
        method: Method::MonteCarlo { samples: mc.samples, seed: mc.seed },
        samples: mc.samples,
        seed: mc.seed,
        escapes,
    };
    for v in std::iter::once(report.h).chain(report.renyi.iter().map(|e| e.value)).chain([report.h_inf]) {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("entropy estimate for `{}`", sys.name())));
        }
    }
    Ok(report)
}

/// Closed form when available, Monte Carlo otherwise.
pub fn entropy_report(sys: &SystemDef, l: usize, orders: &[f64], mc: McConfig) -> Result<EntropyReport> {
    match entropy_closed_form(sys, l, orders) {
        Err(Error::KindMismatch(_)) => entropy_report_mc(sys, l, orders, mc),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const SQUARE_H: f64 = 0.3582933151140954;
    const SQUARE_RENYI: [(f64, f64); 4] =
        [(1.5, 0.341959584425969), (2.0, 0.32598261296981057), (4.0, 0.26823965207235007), (8.0, 0.18921045867533462)];

    #[test]
    fn doubling_entropy() {
        let e = entropy_mc(&SystemDef::doubling(), 3, McConfig::new(100_000, 1)).unwrap();
        assert!((e.value - 21f64.sqrt().ln()).abs() < 0.01);
        assert_relative_eq!(e.value, 1.5222612188617115, max_relative = 1e-12);
        for l in 1..7 {
            let truth = 0.5 * ((4f64.powi(l) - 1.0).ln() - 3f64.ln());
            for s in [1.5, 2.0, 7.0] {
                let r = renyi_mc(&SystemDef::doubling(), l as usize, s, McConfig::new(100, 2)).unwrap();
                assert_relative_eq!(r.value, truth, max_relative = 1e-12, epsilon = 1e-14);
            }
        }
        assert_relative_eq!(
            renyi_sup(&SystemDef::doubling(), 5, McConfig::new(100, 3)).unwrap(),
            0.5 * 341f64.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn identity_entropy() {
        let sys = SystemDef::identity(1);
        assert_relative_eq!(
            entropy_mc(&sys, 5, McConfig::new(50, 1)).unwrap().value,
            0.5 * 5f64.ln(),
            max_relative = 1e-14
        );
        assert!(entropy_mc(&sys, 5, McConfig::new(50, 1)).unwrap().stderr < 1e-15);
        assert_relative_eq!(
            renyi_mc(&sys, 4, 3.0, McConfig::new(50, 1)).unwrap().value,
            0.5 * 4f64.ln(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            renyi_sup(&SystemDef::identity(2), 3, McConfig::new(50, 1)).unwrap(),
            3f64.ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn square_map_against_quadrature() {
        let sys = SystemDef::square();
        let mc = McConfig::new(100_000, 7);
        let orders: Vec<f64> = SQUARE_RENYI.iter().map(|p| p.0).collect();
        let r = entropy_report_mc(&sys, 2, &orders, mc).unwrap();
        assert!((r.h - SQUARE_H).abs() <= 3.0 * r.stderr_h, "{} ± {}", r.h, r.stderr_h);
        assert!(r.stderr_h < 2e-3);
        for ((s, truth), e) in SQUARE_RENYI.iter().zip(&r.renyi) {
            assert_eq!(*s, e.s);
            assert!((e.value - truth).abs() <= 3.0 * e.stderr, "s={s}: {e:?} vs {truth}");
        }
        assert_eq!(r.h_inf, 0.0);
        let single = renyi_mc(&sys, 2, 2.0, mc).unwrap();
        assert_eq!(single.value, r.renyi[1].value);
        let sup = renyi_sup(&sys, 2, McConfig::new(10_000, 7)).unwrap();
        assert!((0.0..1e-3).contains(&sup));
    }

    #[test]
    fn closed_forms() {
        let r = entropy_closed_form(&SystemDef::doubling(), 5, &[2.0]).unwrap();
        assert_relative_eq!(r.h, 0.5 * (1023f64.ln() - 3f64.ln()), max_relative = 1e-14);
        assert_relative_eq!(r.h, 2.915941238641758, max_relative = 1e-12);
        assert_eq!(r.renyi_at(2.0), Some(r.h));
        assert_eq!(r.h_inf, r.h);

        let lti = SystemDef::lti(vec![vec![0.5]]).unwrap();
        let r = entropy_closed_form(&lti, 64, &[]).unwrap();
        let series = 0.5 * ((1.0 - 0.25f64.powi(64)) / 0.75).ln() + 2f64.ln();
        assert!((r.h - series).abs() < 1e-8);
        assert!((r.h - (0.5 * (4.0f64 / 3.0).ln() + 2f64.ln())).abs() < 1e-8);

        let id = entropy_closed_form(&SystemDef::identity(3), 1, &[]).unwrap();
        assert_eq!(id.h, id.h0);
        assert_eq!(id.h0, 0.0);

        assert!(matches!(entropy_closed_form(&SystemDef::square(), 2, &[]), Err(Error::KindMismatch(_))));
    }

    #[test]
    fn closed_form_matches_monte_carlo() {
        let systems = [
            SystemDef::doubling(),
            SystemDef::identity(2),
            SystemDef::lti(vec![vec![0.5, 0.3], vec![-0.2, 0.6]]).unwrap(),
        ];
        let orders = [1.5, 2.0, 4.0];
        for sys in &systems {
            for l in [1, 3, 6] {
                let cf = entropy_closed_form(sys, l, &orders).unwrap();
                let mc = entropy_report_mc(sys, l, &orders, McConfig::new(500, 4)).unwrap();
                let tol = |se: f64| 3.0 * se + 1e-10 * cf.h.abs().max(1.0);
                assert!((cf.h - mc.h).abs() <= tol(mc.stderr_h));
                for (a, b) in cf.renyi.iter().zip(&mc.renyi) {
                    assert!((a.value - b.value).abs() <= tol(b.stderr));
                }
                assert!((cf.h_inf - mc.h_inf).abs() <= 1e-10 * cf.h.abs().max(1.0));
            }
        }
    }

    #[test]
    fn entropy_properties() {
        let systems = [
            SystemDef::square(),
            SystemDef::nonlinear3d(),
            SystemDef::doubling(),
            SystemDef::lti(vec![vec![0.9, 0.4], vec![0.0, 0.5]]).unwrap(),
        ];
        let orders = [1.5, 2.0, 4.0, 8.0];
        for sys in &systems {
            for l in [2, 4] {
                let r = entropy_report_mc(sys, l, &orders, McConfig::new(4000, 5)).unwrap();
                assert!(r.h >= r.h0 - 3.0 * r.stderr_h);
                let mut prev = (r.h, r.stderr_h);
                for e in &r.renyi {
                    assert!(e.value >= r.h0 - 3.0 * e.stderr);
                    assert!(e.value <= prev.0 + 3.0 * prev.1.hypot(e.stderr) + 1e-12, "{}: s={}", sys.name(), e.s);
                    prev = (e.value, e.stderr);
                }
                assert!(r.h_inf <= prev.0 + 3.0 * prev.1 + 1e-12);
                assert!(r.h_inf >= r.h0);
            }
        }
    }

    #[test]
    fn report_is_worker_independent_and_serializes() {
        let sys = SystemDef::nonlinear3d();
        let a = entropy_report_mc(&sys, 3, &[2.0], McConfig::new(300, 8).with_workers(1)).unwrap();
        let b = entropy_report_mc(&sys, 3, &[2.0], McConfig::new(300, 8).with_workers(4)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let back: EntropyReport = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
        assert_relative_eq!(a.to_bits().h * std::f64::consts::LN_2, a.h, max_relative = 1e-15);
    }

    #[test]
    fn invalid_orders() {
        let sys = SystemDef::square();
        assert!(renyi_mc(&sys, 2, 1.0, McConfig::new(10, 1)).is_err());
        assert!(renyi_mc(&sys, 2, f64::INFINITY, McConfig::new(10, 1)).is_err());
        assert!(entropy_mc(&sys, 2, McConfig::new(1, 1)).is_err());
    }
}
