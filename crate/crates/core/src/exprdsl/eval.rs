use std::f64::consts::{FRAC_PI_2, PI, TAU};

use super::{BinOp, Expr, Func};
use crate::error::{Error, Result};
use crate::geometry::Interval;

/// A numeric domain the expression language can be evaluated in.
pub trait Semantics: Clone + Sized {
    fn constant(c: f64, like: &Self) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Result<Self>;
    fn neg(&self) -> Self;
    fn powi(&self, k: i32) -> Result<Self>;
    fn min(&self, o: &Self) -> Self;
    fn max(&self, o: &Self) -> Self;
    fn apply(&self, f: Func) -> Result<Self>;
}

pub(super) fn eval<S: Semantics>(e: &Expr, env: &[S]) -> Result<S> {
    let Some(first) = env.first() else {
        return Err(Error::DimensionMismatch { expected: e.arity().max(1), got: 0 });
    };
    if e.arity() > env.len() {
        return Err(Error::DimensionMismatch { expected: e.arity(), got: env.len() });
    }
    eval_node(e, env, first)
}

fn eval_node<S: Semantics>(e: &Expr, env: &[S], like: &S) -> Result<S> {
    Ok(match e {
        Expr::Const(c) => S::constant(*c, like),
        Expr::Var(i) => env[*i].clone(),
        Expr::Neg(a) => eval_node(a, env, like)?.neg(),
        Expr::Pow(a, k) => eval_node(a, env, like)?.powi(*k)?,
        Expr::Call(f, a) => eval_node(a, env, like)?.apply(*f)?,
        Expr::Binary(op, a, b) => {
            let a = eval_node(a, env, like)?;
            let b = eval_node(b, env, like)?;
            match op {
                BinOp::Add => a.add(&b),
                BinOp::Sub => a.sub(&b),
                BinOp::Mul => a.mul(&b),
                BinOp::Div => a.div(&b)?,
                BinOp::Min => Semantics::min(&a, &b),
                BinOp::Max => Semantics::max(&a, &b),
            }
        }
    })
}

pub(crate) fn mod1(x: f64) -> f64 {
    x - x.floor()
}

impl Semantics for f64 {
    fn constant(c: f64, _: &Self) -> Self {
        c
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Result<Self> {
        Ok(self / o)
    }
    fn neg(&self) -> Self {
        -self
    }
    fn powi(&self, k: i32) -> Result<Self> {
        let m = f64::powi(*self, k.unsigned_abs() as i32);
        Ok(if k < 0 { 1.0 / m } else { m })
    }
    fn min(&self, o: &Self) -> Self {
        if self <= o {
            *self
        } else {
            *o
        }
    }
    fn max(&self, o: &Self) -> Self {
        if self >= o {
            *self
        } else {
            *o
        }
    }
    fn apply(&self, f: Func) -> Result<Self> {
        let x = *self;
        Ok(match f {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Log => {
                if x <= 0.0 {
                    return Err(Error::LogDomain(format!("log({x})")));
                }
                x.ln()
            }
            Func::Abs => x.abs(),
            Func::Mod1 => mod1(x),
        })
    }
}

/// Interval enclosure plus a flag recording that a `mod1` breakpoint was crossed and the
/// enclosure is the hull of several pieces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalValue {
    pub interval: Interval,
    pub piecewise: bool,
}

impl From<Interval> for IntervalValue {
    fn from(interval: Interval) -> Self {
        Self { interval, piecewise: false }
    }
}

impl IntervalValue {
    fn with(&self, o: &Self, interval: Interval) -> Self {
        Self { interval, piecewise: self.piecewise || o.piecewise }
    }

    fn unary(&self, interval: Interval) -> Self {
        Self { interval, piecewise: self.piecewise }
    }
}

fn hull4(a: f64, b: f64, c: f64, d: f64) -> Interval {
    Interval::hull_of(a.min(b).min(c.min(d)), a.max(b).max(c.max(d)))
}

/// Is there an integer `k` with `lo ≤ phase + k·period ≤ hi`?
fn hits(lo: f64, hi: f64, phase: f64) -> bool {
    let k = ((lo - phase) / TAU).ceil();
    phase + k * TAU <= hi
}

fn sin_range(x: Interval) -> Interval {
    if x.width() >= TAU {
        return Interval::hull_of(-1.0, 1.0);
    }
    let (a, b) = (x.lo().sin(), x.hi().sin());
    let hi = if hits(x.lo(), x.hi(), FRAC_PI_2) { 1.0 } else { a.max(b) };
    let lo = if hits(x.lo(), x.hi(), -FRAC_PI_2) { -1.0 } else { a.min(b) };
    Interval::hull_of(lo, hi)
}

fn cos_range(x: Interval) -> Interval {
    if x.width() >= TAU {
        return Interval::hull_of(-1.0, 1.0);
    }
    let (a, b) = (x.lo().cos(), x.hi().cos());
    let hi = if hits(x.lo(), x.hi(), 0.0) { 1.0 } else { a.max(b) };
    let lo = if hits(x.lo(), x.hi(), PI) { -1.0 } else { a.min(b) };
    Interval::hull_of(lo, hi)
}

fn recip(x: Interval) -> Result<Interval> {
    if x.contains_zero() {
        return Err(Error::DivisionByZero(x.to_string()));
    }
    Ok(Interval::hull_of(1.0 / x.lo(), 1.0 / x.hi()))
}

impl Semantics for IntervalValue {
    fn constant(c: f64, _: &Self) -> Self {
        Interval::point(c).into()
    }
    fn add(&self, o: &Self) -> Self {
        self.with(o, Interval::hull_of(self.interval.lo() + o.interval.lo(), self.interval.hi() + o.interval.hi()))
    }
    fn sub(&self, o: &Self) -> Self {
        self.with(o, Interval::hull_of(self.interval.lo() - o.interval.hi(), self.interval.hi() - o.interval.lo()))
    }
    fn mul(&self, o: &Self) -> Self {
        let (a, b) = (self.interval, o.interval);
        self.with(o, hull4(a.lo() * b.lo(), a.lo() * b.hi(), a.hi() * b.lo(), a.hi() * b.hi()))
    }
    fn div(&self, o: &Self) -> Result<Self> {
        let r = recip(o.interval)?;
        let a = self.interval;
        Ok(self.with(o, hull4(a.lo() * r.lo(), a.lo() * r.hi(), a.hi() * r.lo(), a.hi() * r.hi())))
    }
    fn neg(&self) -> Self {
        self.unary(Interval::hull_of(-self.interval.hi(), -self.interval.lo()))
    }
    fn powi(&self, k: i32) -> Result<Self> {
        let x = self.interval;
        if k == 0 {
            return Ok(self.unary(Interval::point(1.0)));
        }
        let m = k.unsigned_abs() as i32;
        let (a, b) = (x.lo().powi(m), x.hi().powi(m));
        let out =
            if m % 2 == 0 && x.contains_zero() { Interval::hull_of(0.0, a.max(b)) } else { Interval::hull_of(a, b) };
        Ok(self.unary(if k < 0 { recip(out)? } else { out }))
    }
    fn min(&self, o: &Self) -> Self {
        self.with(
            o,
            Interval::hull_of(self.interval.lo().min(o.interval.lo()), self.interval.hi().min(o.interval.hi())),
        )
    }
    fn max(&self, o: &Self) -> Self {
        self.with(
            o,
            Interval::hull_of(self.interval.lo().max(o.interval.lo()), self.interval.hi().max(o.interval.hi())),
        )
    }
    fn apply(&self, f: Func) -> Result<Self> {
        let x = self.interval;
        Ok(match f {
            Func::Sin => self.unary(sin_range(x)),
            Func::Cos => self.unary(cos_range(x)),
            Func::Exp => self.unary(Interval::hull_of(x.lo().exp(), x.hi().exp())),
            Func::Log => {
                if x.lo() <= 0.0 {
                    return Err(Error::LogDomain(x.to_string()));
                }
                self.unary(Interval::hull_of(x.lo().ln(), x.hi().ln()))
            }
            Func::Abs => {
                let out = if x.lo() >= 0.0 {
                    x
                } else if x.hi() <= 0.0 {
                    Interval::hull_of(-x.hi(), -x.lo())
                } else {
                    Interval::hull_of(0.0, (-x.lo()).max(x.hi()))
                };
                self.unary(out)
            }
            Func::Mod1 => {
                let fl = x.lo().floor();
                if x.hi().floor() == fl {
                    self.unary(Interval::hull_of(x.lo() - fl, x.hi() - fl))
                } else {
                    IntervalValue { interval: Interval::hull_of(0.0, 1.0), piecewise: true }
                }
            }
        })
    }
}
