#![allow(dead_code)]

use robstab_core::rndd::{estimate, Grid, RnddEstimate};
use robstab_core::{IntervalBox, LyapunovSpec, PlantSpec, SampleSeed};

pub const FHAT: &str = "-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1";
pub const DELTA: &str = "1 - exp(-2*(x1^2 + u1^2))";

pub fn plant() -> PlantSpec {
    PlantSpec::new(1, 1, &[FHAT], &[DELTA]).unwrap()
}

pub fn lyap() -> LyapunovSpec {
    LyapunovSpec::new(1, "x1^2").unwrap()
}

pub fn fhat(x: f64, u: f64) -> f64 {
    -(2.0 * x).sin() - x * u - 0.2 * x - u * u + u
}

pub fn delta(x: f64, u: f64) -> f64 {
    1.0 - (-2.0 * (x * x + u * u)).exp()
}

/// Exact robust decrease for `L = x^2`: the whole next-state interval lies
/// strictly inside `(-|x|, |x|)`.
pub fn oracle(x: f64, u: f64) -> bool {
    fhat(x, u).abs() + delta(x, u) < x.abs()
}

/// Signed distance of the oracle inequality.
pub fn oracle_margin(x: f64, u: f64) -> f64 {
    fhat(x, u).abs() + delta(x, u) - x.abs()
}

pub fn example_grid() -> Grid {
    Grid::new(IntervalBox::new(vec![-0.3, -0.3], vec![0.3, 0.3]).unwrap(), vec![300, 300]).unwrap()
}

pub const GOLDEN_SEED: SampleSeed = SampleSeed(8);

pub fn example_estimate(n_xu: usize, n_xbar: usize, seed: SampleSeed) -> RnddEstimate {
    estimate(&plant(), &lyap(), &example_grid(), n_xu, n_xbar, seed).unwrap().1
}
