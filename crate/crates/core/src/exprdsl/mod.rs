//! A small arithmetic language for declaring dynamics `x⁺ = f(x)` one coordinate at a time.
//!
//! One parsed [`Expr`] can be evaluated under three semantics: plain `f64`, interval
//! enclosures ([`IntervalValue`]) and forward-mode dual numbers ([`Dual`]).
//!
//! Syntax: variables `x1..xn`, real literals, `+ - * /`, unary `-`, `e^k` / `pow(e, k)` for
//! integer `k`, and the functions `sin cos exp log abs mod1 min max`.

mod dual;
mod eval;
mod parser;

use std::fmt;

pub use dual::Dual;
pub use eval::{IntervalValue, Semantics};
pub use parser::parse;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Mod1,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Mod1 => "mod1",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "mod1" => Func::Mod1,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

/// Expression tree. Variables are stored zero-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval<S: Semantics>(&self, env: &[S]) -> crate::Result<S> {
        eval::eval(self, env)
    }

    /// Evaluate at a point.
    pub fn eval_f64(&self, x: &[f64]) -> crate::Result<f64> {
        self.eval(x)
    }

    /// Largest variable index referenced plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call(_, e) => e.arity(),
            Expr::Binary(_, a, b) => a.arity().max(b.arity()),
        }
    }

    /// True when the expression uses `mod1`, whose interval image may need cell splitting.
    pub fn has_breakpoints(&self) -> bool {
        match self {
            Expr::Call(Func::Mod1, _) => true,
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call(_, e) => e.has_breakpoints(),
            Expr::Binary(_, a, b) => a.has_breakpoints() || b.has_breakpoints(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => write!(f, "(0 - {})", -c),
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => {
                f.write_str("-")?;
                write_operand(f, e, 3)
            }
            Expr::Pow(e, k) => {
                write_operand(f, e, 5)?;
                write!(f, "^{k}")
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::Binary(BinOp::Min, a, b) => write!(f, "min({a}, {b})"),
            Expr::Binary(BinOp::Max, a, b) => write!(f, "max({a}, {b})"),
            Expr::Binary(op, a, b) => {
                let (sym, prec) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                    _ => unreachable!(),
                };
                // left-associative: the right operand needs strictly higher precedence
                write_operand(f, a, prec)?;
                write!(f, " {sym} ")?;
                write_operand(f, b, prec + 1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Interval;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const NONLINEAR: [&str; 3] = ["0.9*x1 + 0.1*sin(x2)", "2*x2^3 - x2", "0.9*x3 + 0.1*x1*x2"];

    #[test]
    fn parses_nonlinear_component() {
        let e = parse(NONLINEAR[0], 3).unwrap();
        assert_relative_eq!(e.eval_f64(&[1.0, 0.0, 0.0]).unwrap(), 0.9);
    }

    #[test]
    fn identity_and_malformed() {
        assert_eq!(parse("x1", 1).unwrap(), Expr::Var(0));
        match parse("2*x3 +", 3) {
            Err(crate::Error::Syntax { pos, .. }) => assert_eq!(pos, 6),
            other => panic!("expected syntax error, got {other:?}"),
        }
        assert!(matches!(parse("y + 1", 1), Err(crate::Error::UnknownIdentifier { .. })));
        assert!(matches!(parse("x4", 3), Err(crate::Error::VariableOutOfRange { index: 4, .. })));
        assert!(matches!(parse("x0", 3), Err(crate::Error::VariableOutOfRange { index: 0, .. })));
        assert!(matches!(parse("pow(x1, 1.5)", 1), Err(crate::Error::Syntax { .. })));
        assert!(matches!(parse("", 1), Err(crate::Error::Syntax { .. })));
        assert!(matches!(parse("(x1", 1), Err(crate::Error::Syntax { .. })));
    }

    #[test]
    fn precedence() {
        let e = parse("-x1^2", 1).unwrap();
        assert_eq!(e.eval_f64(&[3.0]).unwrap(), -9.0);
        let e = parse("1 - 2 - 3", 1).unwrap();
        assert_eq!(e.eval_f64(&[0.0]).unwrap(), -4.0);
        let e = parse("8 / 4 / 2", 1).unwrap();
        assert_eq!(e.eval_f64(&[0.0]).unwrap(), 1.0);
        let e = parse("2 + 3 * x1", 1).unwrap();
        assert_eq!(e.eval_f64(&[2.0]).unwrap(), 8.0);
        let e = parse("pow(x1 + 1, 2) + 1e-1", 1).unwrap();
        assert_relative_eq!(e.eval_f64(&[1.0]).unwrap(), 4.1);
        let e = parse("x1^-2", 1).unwrap();
        assert_eq!(e.eval_f64(&[2.0]).unwrap(), 0.25);
    }

    #[test]
    fn scalar_interval_dual_examples() {
        let e = parse("2*x1", 1).unwrap();
        assert_relative_eq!(e.eval_f64(&[0.3]).unwrap(), 0.6);

        let sq = parse("x1*x1", 1).unwrap();
        let iv = sq.eval(&[IntervalValue::from(Interval::new(0.6, 0.8).unwrap())]).unwrap();
        assert_relative_eq!(iv.interval.lo(), 0.36, epsilon = 1e-15);
        assert_relative_eq!(iv.interval.hi(), 0.64, epsilon = 1e-15);
        assert!(!iv.piecewise);

        let dbl = parse("mod1(2*x1)", 1).unwrap();
        let d = dbl.eval(&[Dual::variable(0.3, 0, 1)]).unwrap();
        assert_relative_eq!(d.value, 0.6, epsilon = 1e-15);
        assert_eq!(d.grad, vec![2.0]);
        let h = 1e-6;
        let fd = (dbl.eval_f64(&[0.3 + h]).unwrap() - dbl.eval_f64(&[0.3 - h]).unwrap()) / (2.0 * h);
        assert_relative_eq!(fd, 2.0, max_relative = 1e-8);
    }

    #[test]
    fn interval_errors() {
        let e = parse("1 / x1", 1).unwrap();
        let r = e.eval(&[IntervalValue::from(Interval::new(-1.0, 1.0).unwrap())]);
        assert!(matches!(r, Err(crate::Error::DivisionByZero(_))));
        let e = parse("log(x1)", 1).unwrap();
        let r = e.eval(&[IntervalValue::from(Interval::new(0.0, 1.0).unwrap())]);
        assert!(matches!(r, Err(crate::Error::LogDomain(_))));
        assert!(matches!(e.eval_f64(&[-1.0]), Err(crate::Error::LogDomain(_))));
    }

    #[test]
    fn mod1_interval_splits_are_flagged() {
        let e = parse("mod1(2*x1)", 1).unwrap();
        let inside = e.eval(&[IntervalValue::from(Interval::new(0.1, 0.2).unwrap())]).unwrap();
        assert!(!inside.piecewise);
        assert_relative_eq!(inside.interval.lo(), 0.2);
        assert_relative_eq!(inside.interval.hi(), 0.4);
        let across = e.eval(&[IntervalValue::from(Interval::new(0.4, 0.6).unwrap())]).unwrap();
        assert!(across.piecewise);
        assert_eq!(across.interval, Interval::new(0.0, 1.0).unwrap());
    }

    #[test]
    fn subgradient_conventions() {
        let abs = parse("abs(x1)", 1).unwrap();
        assert_eq!(abs.eval(&[Dual::variable(0.0, 0, 1)]).unwrap().grad, vec![-1.0]);
        assert_eq!(abs.eval(&[Dual::variable(2.0, 0, 1)]).unwrap().grad, vec![1.0]);
        let mn = parse("min(2*x1, 3*x1)", 1).unwrap();
        assert_eq!(mn.eval(&[Dual::variable(0.0, 0, 1)]).unwrap().grad, vec![2.0]);
        let mx = parse("max(2*x1, 3*x1)", 1).unwrap();
        assert_eq!(mx.eval(&[Dual::variable(0.0, 0, 1)]).unwrap().grad, vec![2.0]);
        assert_eq!(mx.eval(&[Dual::variable(1.0, 0, 1)]).unwrap().grad, vec![3.0]);
    }

    const SMOOTH: [&str; 8] = [
        "0.9*x1 + 0.1*sin(x2)",
        "2*x2^3 - x2",
        "0.9*x3 + 0.1*x1*x2",
        "exp(x1) * cos(x2) - x3^2",
        "x1 / (2 + x2*x2) + log(3 + x3)",
        "pow(x1 - x2, 3) * -x3",
        "abs(x1) + mod1(x2 + 5) - min(x1, x3) + max(x2, x3)",
        "sin(x1*x2*x3)^-2",
    ];

    fn random_box(rng: &mut ChaCha8Rng) -> Vec<Interval> {
        (0..3)
            .map(|_| {
                let lo = rng.gen_range(-1.5..1.5);
                let w = rng.gen_range(0.0..0.8) * rng.gen::<f64>();
                Interval::new(lo, lo + w).unwrap()
            })
            .collect()
    }

    #[test]
    fn interval_soundness_randomized() {
        let exprs: Vec<Expr> = SMOOTH.iter().map(|s| parse(s, 3).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut violations = 0usize;
        let mut checked = 0usize;
        for _ in 0..1000 {
            let bx = random_box(&mut rng);
            let env: Vec<IntervalValue> = bx.iter().map(|&i| i.into()).collect();
            for e in &exprs {
                let Ok(enc) = e.eval(&env) else { continue };
                for _ in 0..100 {
                    let p: Vec<f64> = bx.iter().map(|i| i.lo() + rng.gen::<f64>() * i.width()).collect();
                    if let Ok(v) = e.eval_f64(&p) {
                        checked += 1;
                        if !enc.interval.contains(v) {
                            violations += 1;
                        }
                    }
                }
            }
        }
        assert!(checked > 500_000);
        assert_eq!(violations, 0);
    }

    fn near_kink(p: &[f64]) -> bool {
        // abs at x1, mod1 at integers of x2 + 5, min(x1, x3), max(x2, x3)
        p[0].abs() < 1e-3
            || ((p[1] + 5.0) - (p[1] + 5.0).round()).abs() < 1e-3
            || (p[0] - p[2]).abs() < 1e-3
            || (p[1] - p[2]).abs() < 1e-3
            || (p[0] * p[1] * p[2]).sin().abs() < 1e-2
    }

    #[test]
    fn dual_matches_central_differences() {
        let exprs: Vec<Expr> = SMOOTH.iter().map(|s| parse(s, 3).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut accepted = 0;
        while accepted < 1000 {
            let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if near_kink(&p) {
                continue;
            }
            accepted += 1;
            let env = Dual::seed_point(&p);
            for e in &exprs {
                let d = e.eval(&env).unwrap();
                for j in 0..3 {
                    let h = 1e-6 * p[j].abs().max(1.0);
                    let mut a = p.clone();
                    let mut b = p.clone();
                    a[j] += h;
                    b[j] -= h;
                    let fd = (e.eval_f64(&a).unwrap() - e.eval_f64(&b).unwrap()) / (2.0 * h);
                    let scale = d.grad[j].abs().max(1.0);
                    assert!((fd - d.grad[j]).abs() / scale < 1e-6, "{e} at {p:?}, ∂{j}: dual {} vs fd {fd}", d.grad[j]);
                }
            }
        }
    }

    #[test]
    fn print_parse_fixed_point() {
        for s in SMOOTH.iter().chain(["-(x1 - x2) - -x3", "x1 - (x2 - x3)", "(x1 + x2)^2", "-x1^2", "1e-7 * x1"].iter())
        {
            let e = parse(s, 3).unwrap();
            let printed = e.to_string();
            let again = parse(&printed, 3).unwrap();
            assert_eq!(e, again, "{s} -> {printed}");
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![(0.0..10.0f64).prop_map(Expr::Const), (0usize..3).prop_map(Expr::Var),];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (inner.clone(), -3i32..4).prop_map(|(e, k)| Expr::Pow(Box::new(e), k)),
                (
                    inner.clone(),
                    prop::sample::select(vec![Func::Sin, Func::Cos, Func::Exp, Func::Log, Func::Abs, Func::Mod1])
                )
                    .prop_map(|(e, f)| Expr::Call(f, Box::new(e))),
                (
                    inner.clone(),
                    inner,
                    prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Min, BinOp::Max])
                )
                    .prop_map(|(a, b, op)| Expr::Binary(op, Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(e in arb_expr()) {
            let printed = e.to_string();
            let parsed = parse(&printed, 3).unwrap();
            prop_assert_eq!(&parsed, &e);
            prop_assert_eq!(parsed.to_string(), printed);
        }
    }
}
