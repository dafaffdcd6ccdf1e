//! Monte-Carlo closed-loop validation under bounded noise:
//! `x(k+1) = fhat(x, mu(x)) + e(k)` with `e(k)` uniform on `[-delta, delta]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerModel;
use crate::doa::{DoaResult, LevelSetSampler};
use crate::error::{Error, Result};
use crate::model::{IntervalBox, LyapunovSpec, PlantSpec};
use crate::rndd::{CellStatus, RnddEstimate};
use crate::sampling::{Purpose, SampleSeed, SampleStream};

pub const DEFAULT_COUNT: usize = 1000;
pub const DEFAULT_K_MAX: usize = 200;
const MAX_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: Vec<f64>,
    pub control: Vec<f64>,
    /// Box the next state was drawn from.
    pub future: IntervalBox,
}

/// One closed-loop step; step `k` uses scalars `k*n .. (k+1)*n` of `stream`.
pub fn step(plant: &PlantSpec, mu: &ControllerModel, x: &[f64], stream: SampleStream, k: u64) -> Result<StepOutcome> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("non-finite state {x:?}")));
    }
    let u = mu.eval(x);
    let future = plant.future_state_box(x, &u)?;
    let mut rng = stream.rng_at(k * plant.n() as u64);
    let mut next = vec![0.0; plant.n()];
    rng.fill_uniform(future.lower(), future.upper(), &mut next);
    Ok(StepOutcome { next, control: u, future })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub states: Vec<Vec<f64>>,
    pub levels: Vec<f64>,
    pub in_level_set: Vec<bool>,
    pub in_x0: Vec<bool>,
}

impl Trajectory {
    pub fn initial(&self) -> &[f64] {
        &self.states[0]
    }
}

/// `L(x(k)) <= alpha` at every recorded step.
pub fn check_invariance(levels: &[f64], alpha_star: f64) -> bool {
    levels.iter().all(|l| *l <= alpha_star)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trajectories: usize,
    pub k_max: usize,
    pub seed: SampleSeed,
    pub alpha_star: f64,
    pub x0_bounds: IntervalBox,
    pub steps_total: u64,
    /// Steps taken from states outside the `X0` bounding box.
    pub steps_outside_x0: u64,
    pub steps_decreasing: u64,
    pub decrease_fraction: f64,
    pub invariant_trajectories: usize,
    pub invariance_fraction: f64,
    /// Entered the `X0` bounding box by `k_max` and never left it afterwards.
    pub converged_trajectories: usize,
    pub converged_fraction: f64,
    pub final_in_x0: usize,
    /// Steps whose `(x; mu(x))` lies in an accepted cell, and how many of them
    /// failed to strictly decrease `L`.
    pub accepted_steps: u64,
    pub accepted_step_decrease_failures: u64,
    pub noise_bound_violations: u64,
    pub drawn_scalars: u64,
}

struct Tally {
    traj: Trajectory,
    outside: u64,
    decreasing: u64,
    accepted: u64,
    accepted_fail: u64,
    noise_viol: u64,
    drawn: u64,
}

fn frac(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Runs `count` trajectories of `k_max` steps from initial states uniform on
/// the certified level set.
#[allow(clippy::too_many_arguments)]
pub fn simulate_batch(
    plant: &PlantSpec,
    lyap: &LyapunovSpec,
    mu: &ControllerModel,
    doa: &DoaResult,
    est: Option<&RnddEstimate>,
    count: usize,
    k_max: usize,
    seed: SampleSeed,
) -> Result<(SimReport, Vec<Trajectory>)> {
    if count == 0 || k_max == 0 {
        return Err(Error::Invalid("count and k_max must be at least 1".into()));
    }
    let sampler = LevelSetSampler {
        lyap,
        alpha: doa.alpha_star,
        bounds: &doa.level_set_bounds,
        exclude: None,
        max_attempts: MAX_ATTEMPTS,
    };
    let tallies: Vec<Tally> = (0..count)
        .into_par_iter()
        .map(|id| {
            let mut init_rng = SampleStream::new(seed, Purpose::SimInitial, id as u64).rng();
            let x_init = sampler
                .sample(&mut init_rng)?
                .ok_or_else(|| Error::Invalid("could not sample an initial state in the level set".into()))?;
            let t = run_trajectory(plant, lyap, mu, doa, est, id, x_init, k_max, seed)?;
            Ok(Tally { drawn: t.drawn + init_rng.drawn(), ..t })
        })
        .collect::<Result<_>>()?;

    let mut report = SimReport {
        trajectories: count,
        k_max,
        seed,
        alpha_star: doa.alpha_star,
        x0_bounds: doa.x0_bounds.clone(),
        steps_total: (count * k_max) as u64,
        steps_outside_x0: 0,
        steps_decreasing: 0,
        decrease_fraction: 1.0,
        invariant_trajectories: 0,
        invariance_fraction: 1.0,
        converged_trajectories: 0,
        converged_fraction: 1.0,
        final_in_x0: 0,
        accepted_steps: 0,
        accepted_step_decrease_failures: 0,
        noise_bound_violations: 0,
        drawn_scalars: 0,
    };
    let mut trajectories = Vec::with_capacity(count);
    for t in tallies {
        report.steps_outside_x0 += t.outside;
        report.steps_decreasing += t.decreasing;
        report.accepted_steps += t.accepted;
        report.accepted_step_decrease_failures += t.accepted_fail;
        report.noise_bound_violations += t.noise_viol;
        report.drawn_scalars += t.drawn;
        if check_invariance(&t.traj.levels, doa.alpha_star) {
            report.invariant_trajectories += 1;
        }
        let last = *t.traj.in_x0.last().expect("non-empty trajectory");
        if last {
            report.final_in_x0 += 1;
        }
        if let Some(entry) = t.traj.in_x0.iter().position(|b| *b) {
            if t.traj.in_x0[entry..].iter().all(|b| *b) {
                report.converged_trajectories += 1;
            }
        }
        trajectories.push(t.traj);
    }
    report.decrease_fraction = frac(report.steps_decreasing, report.steps_outside_x0);
    report.invariance_fraction = frac(report.invariant_trajectories as u64, count as u64);
    report.converged_fraction = frac(report.converged_trajectories as u64, count as u64);
    Ok((report, trajectories))
}

#[allow(clippy::too_many_arguments)]
fn run_trajectory(
    plant: &PlantSpec,
    lyap: &LyapunovSpec,
    mu: &ControllerModel,
    doa: &DoaResult,
    est: Option<&RnddEstimate>,
    id: usize,
    x_init: Vec<f64>,
    k_max: usize,
    seed: SampleSeed,
) -> Result<Tally> {
    let noise = SampleStream::new(seed, Purpose::SimNoise, id as u64);
    let mut rng = noise.rng();
    let n = plant.n();
    let mut x = x_init;
    let mut level = lyap.eval(&x)?;
    let mut traj = Trajectory { id, states: Vec::with_capacity(k_max + 1), levels: Vec::with_capacity(k_max + 1), in_level_set: Vec::new(), in_x0: Vec::new() };
    let mut tally = (0u64, 0u64, 0u64, 0u64, 0u64);
    let mut xu = vec![0.0; n + plant.m()];
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for k in 0..=k_max {
        let inside_x0 = doa.x0_bounds.contains(&x);
        traj.states.push(x.clone());
        traj.levels.push(level);
        traj.in_level_set.push(level <= doa.alpha_star);
        traj.in_x0.push(inside_x0);
        if k == k_max {
            break;
        }
        xu[..n].copy_from_slice(&x);
        mu.eval_into(&x, &mut xu[n..]);
        plant.future_box_into(&xu, &mut lo, &mut hi)?;
        let mut next = vec![0.0; n];
        rng.fill_uniform(&lo, &hi, &mut next);
        if !next.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| l <= v && v <= h) {
            tally.4 += 1;
        }
        let next_level = lyap.eval(&next)?;
        let decreased = next_level < level;
        if !inside_x0 {
            tally.0 += 1;
            tally.1 += decreased as u64;
        }
        if let Some(est) = est {
            if est.status_at(&xu) == Some(CellStatus::Accepted) {
                tally.2 += 1;
                tally.3 += (!decreased) as u64;
            }
        }
        x = next;
        level = next_level;
    }
    Ok(Tally {
        traj,
        outside: tally.0,
        decreasing: tally.1,
        accepted: tally.2,
        accepted_fail: tally.3,
        noise_viol: tally.4,
        drawn: rng.drawn(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{fit_controller, TrainingPair, TrainingSet};
    use crate::doa::ContainmentMethod;

    fn example() -> (PlantSpec, LyapunovSpec, ControllerModel) {
        let plant =
            PlantSpec::new(1, 1, &["-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1"], &["1 - exp(-2*(x1^2 + u1^2))"]).unwrap();
        let pairs = [-0.05, -0.03, -0.01, 0.0, 0.01, 0.03, 0.05]
            .iter()
            .map(|&x| TrainingPair { state: vec![x], control: vec![2.2 * x] })
            .collect();
        let mu = fit_controller(&TrainingSet { pairs }, 0.02).unwrap();
        (plant, LyapunovSpec::new(1, "x1^2").unwrap(), mu)
    }

    fn doa(alpha: f64) -> DoaResult {
        let r = alpha.sqrt();
        DoaResult {
            alpha_star: alpha,
            level_set_bounds: IntervalBox::new(vec![-r], vec![r]).unwrap(),
            x0_bounds: IntervalBox::new(vec![-0.004], vec![0.004]).unwrap(),
            x0_cells: 4,
            method: ContainmentMethod::Interval,
            n_ls: 0,
            tol: 1e-5,
            alpha_max: 0.09,
            alpha_fail: None,
            containment_evaluations: 0,
            drawn_scalars: 0,
            warning: None,
        }
    }

    #[test]
    fn origin_is_an_equilibrium() {
        let (plant, _, mu) = example();
        let s = SampleStream::new(SampleSeed(1), Purpose::User, 0);
        let out = step(&plant, &mu, &[0.0], s, 0).unwrap();
        assert_eq!(out.next, vec![0.0]);
        assert_eq!(out.future.width(0), 0.0);
    }

    #[test]
    fn steps_land_in_future_box() {
        let (plant, _, mu) = example();
        let s = SampleStream::new(SampleSeed(1), Purpose::User, 0);
        for (k, x) in [-0.05, -0.02, 0.013, 0.04].iter().enumerate() {
            let out = step(&plant, &mu, &[*x], s, k as u64).unwrap();
            assert!(out.future.contains(&out.next));
        }
    }

    #[test]
    fn invariance_check() {
        assert!(check_invariance(&[0.0036, 0.002, 0.001], 0.0036));
        assert!(check_invariance(&[0.0036; 5], 0.0036));
        assert!(!check_invariance(&[0.0036, 0.0036 + 1e-12, 0.001], 0.0036));
    }

    #[test]
    fn zero_level_set_gives_constant_zero_trajectories() {
        let (plant, l, mu) = example();
        let mut d = doa(0.0);
        d.level_set_bounds = IntervalBox::point(&[0.0]).unwrap();
        let (rep, trajs) = simulate_batch(&plant, &l, &mu, &d, None, 3, 10, SampleSeed(2)).unwrap();
        assert!(trajs.iter().all(|t| t.states.iter().all(|s| s[0] == 0.0)));
        assert_eq!(rep.converged_trajectories, 3);
        assert_eq!(rep.steps_outside_x0, 0);
    }

    #[test]
    fn batch_is_deterministic_and_bounded() {
        let (plant, l, mu) = example();
        let d = doa(0.0025);
        let (a, ta) = simulate_batch(&plant, &l, &mu, &d, None, 50, 40, SampleSeed(9)).unwrap();
        let (b, tb) = simulate_batch(&plant, &l, &mu, &d, None, 50, 40, SampleSeed(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.noise_bound_violations, 0);
        assert!(ta.iter().all(|t| t.states.len() == 41));
        assert_eq!(a.invariant_trajectories, 50);
        assert_eq!(a.converged_trajectories, 50);
        // 40 noise scalars per trajectory plus at least one initial-state draw
        assert!(a.drawn_scalars >= 50 * 41);
    }
}
