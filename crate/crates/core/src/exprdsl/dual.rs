use super::eval::{mod1, Semantics};
use super::Func;
use crate::error::{Error, Result};

/// Forward-mode dual number carrying a full gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl Dual {
    pub fn constant(value: f64, n: usize) -> Self {
        Self { value, grad: vec![0.0; n] }
    }

    /// Seed variable `index` of an `n`-dimensional point.
    pub fn variable(value: f64, index: usize, n: usize) -> Self {
        let mut grad = vec![0.0; n];
        grad[index] = 1.0;
        Self { value, grad }
    }

    /// One seeded dual per coordinate of `x`, so a single evaluation yields the full gradient.
    pub fn seed_point(x: &[f64]) -> Vec<Dual> {
        (0..x.len()).map(|i| Dual::variable(x[i], i, x.len())).collect()
    }

    fn map(&self, value: f64, slope: f64) -> Self {
        Self { value, grad: self.grad.iter().map(|g| g * slope).collect() }
    }

    fn combine(&self, o: &Self, value: f64, da: f64, db: f64) -> Self {
        Self { value, grad: self.grad.iter().zip(&o.grad).map(|(a, b)| da * a + db * b).collect() }
    }
}

impl Semantics for Dual {
    fn constant(c: f64, like: &Self) -> Self {
        Dual::constant(c, like.grad.len())
    }
    fn add(&self, o: &Self) -> Self {
        self.combine(o, self.value + o.value, 1.0, 1.0)
    }
    fn sub(&self, o: &Self) -> Self {
        self.combine(o, self.value - o.value, 1.0, -1.0)
    }
    fn mul(&self, o: &Self) -> Self {
        self.combine(o, self.value * o.value, o.value, self.value)
    }
    fn div(&self, o: &Self) -> Result<Self> {
        let q = self.value / o.value;
        Ok(self.combine(o, q, 1.0 / o.value, -q / o.value))
    }
    fn neg(&self) -> Self {
        self.map(-self.value, -1.0)
    }
    fn powi(&self, k: i32) -> Result<Self> {
        let v = Semantics::powi(&self.value, k)?;
        let slope = if k == 0 { 0.0 } else { k as f64 * Semantics::powi(&self.value, k - 1)? };
        Ok(self.map(v, slope))
    }
    // Ties go to the left operand.
    fn min(&self, o: &Self) -> Self {
        if self.value <= o.value {
            self.clone()
        } else {
            o.clone()
        }
    }
    fn max(&self, o: &Self) -> Self {
        if self.value >= o.value {
            self.clone()
        } else {
            o.clone()
        }
    }
    fn apply(&self, f: Func) -> Result<Self> {
        let x = self.value;
        Ok(match f {
            Func::Sin => self.map(x.sin(), x.cos()),
            Func::Cos => self.map(x.cos(), -x.sin()),
            Func::Exp => {
                let e = x.exp();
                self.map(e, e)
            }
            Func::Log => {
                if x <= 0.0 {
                    return Err(Error::LogDomain(format!("log({x})")));
                }
                self.map(x.ln(), 1.0 / x)
            }
            // abs(x) = max(-x, x): the left branch -x wins at 0
            Func::Abs => self.map(x.abs(), if x > 0.0 { 1.0 } else { -1.0 }),
            // derivative 1 off the measure-zero breakpoint set
            Func::Mod1 => self.map(mod1(x), 1.0),
        })
    }
}
