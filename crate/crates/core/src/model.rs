//! Uncertain plant set, Lyapunov candidate and interval-box geometry.
//!
//! A plant set is the family of maps `f` with `f(0,0) = 0` and
//! `|f_i(x,u) - fhat_i(x,u)| <= delta_i(x,u)`. It is represented by the pair
//! (`fhat`, `delta`) of expression vectors over the variables
//! `x1..xn, u1..um`.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};

/// Load-time tolerance for `fhat(0,0) = 0`, `delta(0,0) = 0` and `L(0) = 0`.
pub const ORIGIN_TOL: f64 = 1e-12;

/// Below this infinity norm a state is treated as numerically zero when checking
/// `L(x) > 0`; polynomial candidates underflow to exactly 0 there.
pub const NUMERICAL_ZERO: f64 = 1e-100;

macro_rules! real_vector {
    ($name:ident, $what:literal) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Result<Self> {
                if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Invalid(format!(concat!($what, " has non-finite entry {}"), bad)));
                }
                Ok(Self(values))
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

real_vector!(StateVector, "state vector");
real_vector!(ControlVector, "control vector");

/// Axis-aligned box `[lower, upper]` (closed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl IntervalBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::Invalid("interval box must have dimension > 0".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::Dimension { expected: lower.len(), got: upper.len() });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l > u {
                return Err(Error::Invalid(format!("interval box axis {i}: bad bounds [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Degenerate box containing only `p`.
    pub fn point(p: &[f64]) -> Result<Self> {
        Self::new(p.to_vec(), p.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && p.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| l <= v && v <= u)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    /// Sub-box over axes `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(self.lower[range.clone()].to_vec(), self.upper[range].to_vec())
    }

    /// Largest value of `f` over the box corners.
    pub fn max_over_corners(&self, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
        let d = self.dim();
        let mut best = f64::NEG_INFINITY;
        let mut corner = vec![0.0; d];
        for mask in 0u64..(1u64 << d) {
            for (k, c) in corner.iter_mut().enumerate() {
                *c = if mask >> k & 1 == 1 { self.upper[k] } else { self.lower[k] };
            }
            best = best.max(f(&corner)?);
        }
        Ok(best)
    }
}

/// Nominal model and componentwise error bound over `(x; u)`.
#[derive(Debug, Clone)]
pub struct PlantSpec {
    n: usize,
    m: usize,
    fhat: Vec<Expr>,
    delta: Vec<Expr>,
}

/// Variable names for an `n`-state, `m`-input model: `x1..xn, u1..um`.
pub fn plant_variables(n: usize, m: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).chain((1..=m).map(|i| format!("u{i}"))).collect()
}

pub fn state_variables(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

impl PlantSpec {
    /// Parses and validates the model; rejects `fhat(0,0) != 0` or `delta(0,0) != 0`.
    pub fn new<S: AsRef<str>>(n: usize, m: usize, fhat: &[S], delta: &[S]) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Model(format!("dimensions must be positive (n = {n}, m = {m})")));
        }
        if fhat.len() != n {
            return Err(Error::Model(format!("expected {n} nominal-model expressions, got {}", fhat.len())));
        }
        if delta.len() != n {
            return Err(Error::Model(format!("expected {n} error-bound expressions, got {}", delta.len())));
        }
        let vars = plant_variables(n, m);
        let parse_all = |texts: &[S], what: &str| -> Result<Vec<Expr>> {
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| expr::parse(t.as_ref(), &vars).map_err(|e| Error::expr(format!("{what}[{}]", i + 1), e)))
                .collect()
        };
        let plant = Self { n, m, fhat: parse_all(fhat, "fhat")?, delta: parse_all(delta, "delta")? };

        let origin = vec![0.0; n + m];
        for (i, e) in plant.fhat.iter().enumerate() {
            let v = e.eval(&origin).map_err(|err| Error::expr(format!("fhat[{}]", i + 1), err))?;
            if v.abs() > ORIGIN_TOL {
                return Err(Error::Model(format!("fhat[{}](0,0) = {v}, but the origin must be an equilibrium", i + 1)));
            }
        }
        for (i, e) in plant.delta.iter().enumerate() {
            let v = e.eval(&origin).map_err(|err| Error::expr(format!("delta[{}]", i + 1), err))?;
            if v.abs() > ORIGIN_TOL {
                return Err(Error::Model(format!("delta[{}](0,0) = {v}, but the error bound must vanish at the origin", i + 1)));
            }
        }
        Ok(plant)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn fhat(&self) -> &[Expr] {
        &self.fhat
    }

    pub fn delta(&self) -> &[Expr] {
        &self.delta
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x.len() });
        }
        if u.len() != self.m {
            return Err(Error::Dimension { expected: self.m, got: u.len() });
        }
        Ok(())
    }

    fn concat(x: &[f64], u: &[f64]) -> Vec<f64> {
        x.iter().chain(u).copied().collect()
    }

    pub fn eval_nominal(&self, x: &[f64], u: &[f64]) -> Result<StateVector> {
        self.check_dims(x, u)?;
        let xu = Self::concat(x, u);
        let mut out = vec![0.0; self.n];
        self.nominal_into(&xu, &mut out)?;
        Ok(StateVector(out))
    }

    pub fn eval_error_bound(&self, x: &[f64], u: &[f64]) -> Result<StateVector> {
        self.check_dims(x, u)?;
        let xu = Self::concat(x, u);
        let mut out = vec![0.0; self.n];
        self.error_bound_into(&xu, &mut out)?;
        Ok(StateVector(out))
    }

    /// The box of all next states any member of the plant set can produce.
    pub fn future_state_box(&self, x: &[f64], u: &[f64]) -> Result<IntervalBox> {
        self.check_dims(x, u)?;
        let xu = Self::concat(x, u);
        let mut lo = vec![0.0; self.n];
        let mut hi = vec![0.0; self.n];
        self.future_box_into(&xu, &mut lo, &mut hi)?;
        IntervalBox::new(lo, hi)
    }

    /// `fhat` at the concatenated point `xu = (x; u)`.
    pub fn nominal_into(&self, xu: &[f64], out: &mut [f64]) -> Result<()> {
        for (i, (e, o)) in self.fhat.iter().zip(out.iter_mut()).enumerate() {
            *o = e.eval(xu).map_err(|err| Error::expr(format!("fhat[{}] at {xu:?}", i + 1), err))?;
        }
        Ok(())
    }

    pub fn error_bound_into(&self, xu: &[f64], out: &mut [f64]) -> Result<()> {
        for (i, (e, o)) in self.delta.iter().zip(out.iter_mut()).enumerate() {
            let d = e.eval(xu).map_err(|err| Error::expr(format!("delta[{}] at {xu:?}", i + 1), err))?;
            if d < 0.0 {
                return Err(Error::Model(format!("delta[{}] = {d} < 0 at (x; u) = {xu:?}", i + 1)));
            }
            *o = d;
        }
        Ok(())
    }

    /// Writes `fhat - delta` into `lo` and `fhat + delta` into `hi`.
    pub fn future_box_into(&self, xu: &[f64], lo: &mut [f64], hi: &mut [f64]) -> Result<()> {
        self.nominal_into(xu, lo)?;
        self.error_bound_into(xu, hi)?;
        for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
            let (c, d) = (*l, *h);
            *l = c - d;
            *h = c + d;
        }
        Ok(())
    }
}

/// Positive-definite candidate `L: R^n -> R` over `x1..xn`.
#[derive(Debug, Clone)]
pub struct LyapunovSpec {
    n: usize,
    expr: Expr,
}

impl LyapunovSpec {
    pub fn new(n: usize, text: &str) -> Result<Self> {
        if n == 0 {
            return Err(Error::Lyapunov("state dimension must be positive".into()));
        }
        let expr = expr::parse(text, &state_variables(n)).map_err(|e| Error::expr("lyapunov", e))?;
        let at0 = expr.eval(&vec![0.0; n]).map_err(|e| Error::expr("lyapunov", e))?;
        if at0.abs() > ORIGIN_TOL {
            return Err(Error::Lyapunov(format!("L(0) = {at0}, expected 0")));
        }
        Ok(Self { n, expr })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// Evaluates `L(x)`, asserting `L(x) > 0` away from the origin.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x.len() });
        }
        let v = self.expr.eval(x).map_err(|e| Error::expr(format!("lyapunov at {x:?}"), e))?;
        if v < 0.0 || (v == 0.0 && x.iter().any(|c| c.abs() >= NUMERICAL_ZERO)) {
            return Err(Error::Lyapunov(format!("L(x) = {v} is not positive at nonzero x = {x:?}")));
        }
        Ok(v)
    }
}
