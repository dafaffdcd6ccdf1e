//! State-feedback synthesis from the accepted cells: pick training pairs inside
//! the estimate, interpolate them with a Gaussian radial basis, and check that
//! the closed-loop pairs `(x; mu(x))` land in accepted cells.

use std::cmp::Reverse;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doa::{DoaResult, LevelSetSampler, X0Region};
use crate::error::{Error, Result};
use crate::model::LyapunovSpec;
use crate::rndd::{CellStatus, RnddEstimate, StateProjection};
use crate::sampling::{Purpose, SampleSeed, SampleStream};

pub const RIDGE: f64 = 1e-10;
/// Default bandwidth in units of the (largest) state-cell size.
pub const DEFAULT_BANDWIDTH_CELLS: f64 = 3.0;
const MAX_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub state: Vec<f64>,
    pub control: Vec<f64>,
}

/// Training pairs; the last pair is always the origin anchor `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub pairs: Vec<TrainingPair>,
}

impl TrainingSet {
    pub fn anchor(&self) -> &TrainingPair {
        self.pairs.last().expect("training set always holds the anchor")
    }
}

/// Picks every `stride`-th flagged state cell (in linear order) and pairs its
/// center with the middle of the widest accepted control run above it.
pub fn select_training_points(est: &RnddEstimate, proj: &StateProjection, stride: usize) -> Result<TrainingSet> {
    if est.accepted_count == 0 {
        return Err(Error::Invalid("the estimate has no accepted cells to train on".into()));
    }
    if stride == 0 {
        return Err(Error::Invalid("stride must be at least 1".into()));
    }
    let (n, m) = (est.meta.n, est.meta.m);
    let ctrl_grid = crate::rndd::Grid::new(est.grid.region().slice(n..n + m)?, est.grid.cells_per_dim()[n..].to_vec())?;
    let per = est.control_cells();
    let mut pairs = Vec::new();
    let flagged = proj.flags.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i);
    for state_cell in flagged.step_by(stride) {
        let column = &est.status[state_cell * per..(state_cell + 1) * per];
        let control = if m == 1 {
            let (start, len) = longest_accepted_run(column).expect("flagged column has an accepted cell");
            let lower = ctrl_grid.region().lower()[0];
            let h = ctrl_grid.cell_size()[0];
            vec![lower + (start as f64 + len as f64 / 2.0) * h]
        } else {
            ctrl_grid.cell_center(&ctrl_grid.multi_index(deepest_accepted_cell(column, &ctrl_grid)))
        };
        let state = proj.grid.cell_center(&proj.grid.multi_index(state_cell));
        pairs.push(TrainingPair { state, control });
    }
    pairs.push(TrainingPair { state: vec![0.0; n], control: vec![0.0; m] });
    Ok(TrainingSet { pairs })
}

/// `(start, length)` of the first longest run of accepted cells.
fn longest_accepted_run(column: &[CellStatus]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = 0;
    for (j, s) in column.iter().chain(std::iter::once(&CellStatus::Empty)).enumerate() {
        if *s == CellStatus::Accepted {
            continue;
        }
        let len = j - start;
        if len > 0 && best.is_none_or(|(_, l)| len > l) {
            best = Some((start, len));
        }
        start = j + 1;
    }
    best
}

/// Accepted control cell with the largest axis-aligned run margin (the
/// smallest distance, over control axes, to the end of its accepted run).
fn deepest_accepted_cell(column: &[CellStatus], grid: &crate::rndd::Grid) -> usize {
    let dims = grid.cells_per_dim();
    let mut best = (0usize, usize::MAX);
    for (lin, s) in column.iter().enumerate() {
        if *s != CellStatus::Accepted {
            continue;
        }
        let multi = grid.multi_index(lin);
        let mut margin = usize::MAX;
        for a in 0..dims.len() {
            let step = |dir: i64| {
                let mut k = 0usize;
                let mut idx = multi.clone();
                loop {
                    let next = idx[a] as i64 + dir;
                    if next < 0 || next >= dims[a] as i64 {
                        break;
                    }
                    idx[a] = next as usize;
                    if column[grid.linear_index(&idx)] != CellStatus::Accepted {
                        break;
                    }
                    k += 1;
                }
                k
            };
            margin = margin.min(step(-1).min(step(1)));
        }
        if best.1 == usize::MAX || margin > best.0 {
            best = (margin, lin);
        }
    }
    best.1
}

/// How training pairs are chosen from the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingRule {
    /// Midpoint of the longest accepted run in every `stride`-th flagged column.
    #[default]
    LongestRun,
    /// Scalar state and control only: one accepted run per flagged column,
    /// chained so that neighbouring runs overlap, with extra pairs on the
    /// column faces. See [`select_training_corridor`].
    Corridor,
}

fn accepted_runs(column: &[CellStatus]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut j = 0;
    while j < column.len() {
        if column[j] != CellStatus::Accepted {
            j += 1;
            continue;
        }
        let start = j;
        while j < column.len() && column[j] == CellStatus::Accepted {
            j += 1;
        }
        runs.push((start, j));
    }
    runs
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// Training pairs that trace a continuous path through the accepted cells
/// (`n = m = 1`).
///
/// Each maximal block of consecutive flagged columns gets one accepted run
/// per column, chosen to maximize the narrowest overlap between neighbouring
/// runs (then the total run length). Pairs sit at every `stride`-th column
/// center, on every interior face and just inside the two outer faces of the
/// block; their controls are smoothed within the middle half of the run (or,
/// on a face, of the overlap of the two runs). Where no overlapping run
/// exists the chain breaks and that face gets no pair; the state cells that
/// start a new chain are returned alongside the pairs. No continuous
/// controller can stay in the accepted cells across a break.
pub fn select_training_corridor(
    est: &RnddEstimate,
    proj: &StateProjection,
    stride: usize,
) -> Result<(TrainingSet, Vec<usize>)> {
    if est.meta.n != 1 || est.meta.m != 1 {
        return Err(Error::Invalid("the corridor training rule needs one state and one control".into()));
    }
    if est.accepted_count == 0 {
        return Err(Error::Invalid("the estimate has no accepted cells to train on".into()));
    }
    if stride == 0 {
        return Err(Error::Invalid("stride must be at least 1".into()));
    }
    let per = est.control_cells();
    let xs = &proj.grid;
    let (x_lo, hx) = (xs.region().lower()[0], xs.cell_size()[0]);
    let (u_lo, hu) = (est.grid.region().lower()[1], est.grid.cell_size()[1]);
    let u_at = |cells: f64| u_lo + cells * hu;
    let inset = 1e-3 * hx;

    let mut pairs = Vec::new();
    let mut breaks = Vec::new();
    let cols = xs.cells_per_dim()[0];
    let mut c = 0;
    while c < cols {
        if !proj.flags[c] {
            c += 1;
            continue;
        }
        let start = c;
        while c < cols && proj.flags[c] {
            c += 1;
        }
        let block: Vec<Vec<(usize, usize)>> =
            (start..c).map(|k| accepted_runs(&est.status[k * per..(k + 1) * per])).collect();
        let chosen = chain_runs(&block);
        let face_x = |k: usize| x_lo + (start + k) as f64 * hx;
        let band = |r: (usize, usize)| (u_at(r.0 as f64), u_at(r.1 as f64));

        // (x, allowed band)
        let mut nodes: Vec<(f64, (f64, f64))> = Vec::new();
        for (k, run) in chosen.iter().enumerate() {
            if k == 0 {
                nodes.push((face_x(0) + inset, band(*run)));
            } else if overlap(chosen[k - 1], *run) > 0 {
                let lo = run.0.max(chosen[k - 1].0);
                let hi = run.1.min(chosen[k - 1].1);
                nodes.push((face_x(k), band((lo, hi))));
            } else {
                breaks.push(start + k);
            }
            if (start + k) % stride == 0 {
                nodes.push((face_x(k) + 0.5 * hx, band(*run)));
            }
            if k + 1 == chosen.len() {
                nodes.push((face_x(k + 1) - inset, band(*run)));
            }
        }
        let targets = smooth_in_bands(&nodes);
        pairs.extend(nodes.iter().zip(targets).map(|((x, _), u)| pair1(*x, u)));
    }
    pairs.retain(|p| p.state[0] != 0.0);
    pairs.push(TrainingPair { state: vec![0.0], control: vec![0.0] });
    Ok((TrainingSet { pairs }, breaks))
}

fn pair1(x: f64, u: f64) -> TrainingPair {
    TrainingPair { state: vec![x], control: vec![u] }
}

/// Targets that follow the straight line through their neighbours as far as
/// the middle half of each node's band allows (Gauss-Seidel sweeps, started
/// from the band midpoints). Chains broken by a missing overlap are smoothed
/// as one sequence; the clamping keeps every target in its own band.
fn smooth_in_bands(nodes: &[(f64, (f64, f64))]) -> Vec<f64> {
    const SWEEPS: usize = 4000;
    let bounds: Vec<(f64, f64)> = nodes
        .iter()
        .map(|(_, (lo, hi))| {
            let w = hi - lo;
            (lo + 0.25 * w, hi - 0.25 * w)
        })
        .collect();
    let mut t: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let k = t.len();
    if k < 3 {
        return t;
    }
    for _ in 0..SWEEPS {
        for i in 0..k {
            let want = if i == 0 {
                t[1]
            } else if i + 1 == k {
                t[k - 2]
            } else {
                let (xa, x, xb) = (nodes[i - 1].0, nodes[i].0, nodes[i + 1].0);
                t[i - 1] + (t[i + 1] - t[i - 1]) * (x - xa) / (xb - xa)
            };
            t[i] = want.clamp(bounds[i].0, bounds[i].1);
        }
    }
    t
}

/// Per column, the run on the best chain: fewest breaks (neighbouring runs
/// that do not overlap), then the widest narrowest overlap, then the largest
/// total run length. Ties go to the lower run.
fn chain_runs(block: &[Vec<(usize, usize)>]) -> Vec<(usize, usize)> {
    #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    struct Score {
        breaks: Reverse<usize>,
        bottleneck: usize,
        total: usize,
    }
    let mut score: Vec<Vec<Score>> = Vec::with_capacity(block.len());
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(block.len());
    for (k, runs) in block.iter().enumerate() {
        let mut s = Vec::with_capacity(runs.len());
        let mut b = Vec::with_capacity(runs.len());
        for r in runs {
            let len = r.1 - r.0;
            if k == 0 {
                s.push(Score { breaks: Reverse(0), bottleneck: usize::MAX, total: len });
                b.push(0);
                continue;
            }
            let mut best: Option<(Score, usize)> = None;
            for (p, prev) in block[k - 1].iter().enumerate() {
                let ov = overlap(*prev, *r);
                let ps = score[k - 1][p];
                let cand = if ov == 0 {
                    Score { breaks: Reverse(ps.breaks.0 + 1), bottleneck: ps.bottleneck, total: ps.total + len }
                } else {
                    Score { breaks: ps.breaks, bottleneck: ps.bottleneck.min(ov), total: ps.total + len }
                };
                if best.is_none_or(|(sc, _)| cand > sc) {
                    best = Some((cand, p));
                }
            }
            let (sc, p) = best.expect("flagged columns have accepted runs");
            s.push(sc);
            b.push(p);
        }
        score.push(s);
        back.push(b);
    }

    let mut chosen = Vec::with_capacity(block.len());
    let Some(last) = score.last() else {
        return chosen;
    };
    let mut r = (0..last.len()).max_by(|&a, &b| last[a].cmp(&last[b]).then(b.cmp(&a))).unwrap_or(0);
    for k in (0..block.len()).rev() {
        chosen.push(block[k][r]);
        r = back[k][r];
    }
    chosen.reverse();
    chosen
}

/// Gaussian radial-basis interpolant
/// `mu(x) = s(x) - s(0) k(x, 0)` with `s(x) = sum_i w_i k(x, c_i)` and
/// `k(x, c) = exp(-|x - c|^2 / (2 h^2))`.
///
/// The `s(0)` term is the tiny residual the ridge leaves at the origin anchor;
/// subtracting it makes `mu(0)` exactly zero in floating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerModel {
    pub centers: Vec<Vec<f64>>,
    /// One row of `m` weights per center.
    pub weights: Vec<Vec<f64>>,
    pub bandwidth: f64,
    pub ridge: f64,
    pub origin_offset: Vec<f64>,
}

impl ControllerModel {
    pub fn n(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn m(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.raw_into(x, out);
        let scale = -0.5 / (self.bandwidth * self.bandwidth);
        let k0 = (scale * x.iter().map(|v| v * v).sum::<f64>()).exp();
        for (o, off) in out.iter_mut().zip(&self.origin_offset) {
            *o -= off * k0;
        }
    }

    fn raw_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let scale = -0.5 / (self.bandwidth * self.bandwidth);
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let r2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = (scale * r2).exp();
            for (o, wi) in out.iter_mut().zip(w) {
                *o += wi * k;
            }
        }
    }
}

/// Interpolates the training pairs; `mu(0) = 0` holds exactly.
pub fn fit_controller(train: &TrainingSet, bandwidth: f64) -> Result<ControllerModel> {
    let pairs = &train.pairs;
    if pairs.len() < 2 {
        return Err(Error::Fit("need at least two training pairs".into()));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::Fit(format!("bandwidth {bandwidth} must be positive")));
    }
    let n = pairs[0].state.len();
    let m = pairs[0].control.len();
    if pairs.iter().any(|p| p.state.len() != n || p.control.len() != m) {
        return Err(Error::Fit("training pairs have inconsistent dimensions".into()));
    }
    for i in 0..pairs.len() {
        for j in 0..i {
            if pairs[i].state == pairs[j].state {
                return Err(Error::Fit(format!("duplicate training state {:?}", pairs[i].state)));
            }
        }
    }

    let k = pairs.len();
    let scale = -0.5 / (bandwidth * bandwidth);
    let kernel = DMatrix::from_fn(k, k, |i, j| {
        let r2: f64 = pairs[i].state.iter().zip(&pairs[j].state).map(|(a, b)| (a - b) * (a - b)).sum();
        (scale * r2).exp() + if i == j { RIDGE } else { 0.0 }
    });
    let singular = || Error::Fit("interpolation system is singular; use a larger bandwidth or fewer training points".into());
    let chol = kernel.clone().cholesky();
    let mut weights = vec![vec![0.0; m]; k];
    for c in 0..m {
        let rhs = DVector::from_fn(k, |i, _| pairs[i].control[c]);
        let w = match &chol {
            Some(ch) => ch.solve(&rhs),
            None => kernel.clone().lu().solve(&rhs).ok_or_else(singular)?,
        };
        if w.iter().any(|v| !v.is_finite()) {
            return Err(singular());
        }
        for i in 0..k {
            weights[i][c] = w[i];
        }
    }
    let mut model = ControllerModel {
        centers: pairs.iter().map(|p| p.state.clone()).collect(),
        weights,
        bandwidth,
        ridge: RIDGE,
        origin_offset: vec![0.0; m],
    };
    let mut at0 = vec![0.0; m];
    model.raw_into(&vec![0.0; n], &mut at0);
    model.origin_offset = at0;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub n_verify: usize,
    pub states: Vec<Vec<f64>>,
    pub passed: Vec<bool>,
    /// States whose `(x; mu(x))` is not in an accepted cell.
    pub violations: Vec<Vec<f64>>,
    pub drawn_scalars: u64,
    pub warning: Option<String>,
}

impl VerificationReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples states uniformly on the certified level set minus `X0` and
/// requires `(x; mu(x))` to sit in an accepted cell.
pub fn verify_controller(
    mu: &ControllerModel,
    est: &RnddEstimate,
    lyap: &LyapunovSpec,
    doa: &DoaResult,
    x0: &X0Region,
    n_verify: usize,
    seed: SampleSeed,
) -> Result<VerificationReport> {
    let empty = |warning: &str| VerificationReport {
        n_verify,
        states: Vec::new(),
        passed: Vec::new(),
        violations: Vec::new(),
        drawn_scalars: 0,
        warning: Some(warning.to_string()),
    };
    if n_verify == 0 {
        return Ok(empty("n_verify = 0: verification is vacuous"));
    }
    if doa.alpha_star <= 0.0 {
        return Ok(empty("alpha* = 0: the certified level set is the origin only"));
    }
    let n = est.meta.n;
    let state_grid = est.grid.leading(n)?;
    let sampler = LevelSetSampler {
        lyap,
        alpha: doa.alpha_star,
        bounds: &doa.level_set_bounds,
        exclude: Some((&state_grid, x0)),
        max_attempts: MAX_ATTEMPTS,
    };
    let results: Vec<(Option<(Vec<f64>, bool)>, u64)> = (0..n_verify)
        .into_par_iter()
        .map(|i| {
            let mut rng = SampleStream::new(seed, Purpose::Verify, i as u64).rng();
            let Some(x) = sampler.sample(&mut rng)? else {
                return Ok((None, rng.drawn()));
            };
            let xu: Vec<f64> = x.iter().copied().chain(mu.eval(&x)).collect();
            let ok = est.status_at(&xu) == Some(CellStatus::Accepted);
            Ok((Some((x, ok)), rng.drawn()))
        })
        .collect::<Result<_>>()?;

    let mut report = empty("");
    report.warning = None;
    let mut missed = 0usize;
    for (r, drawn) in results {
        report.drawn_scalars += drawn;
        match r {
            Some((x, ok)) => {
                if !ok {
                    report.violations.push(x.clone());
                }
                report.states.push(x);
                report.passed.push(ok);
            }
            None => missed += 1,
        }
    }
    if missed > 0 {
        report.warning = Some(format!("{missed} verification states could not be sampled from the level set"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(x: f64, u: f64) -> TrainingPair {
        TrainingPair { state: vec![x], control: vec![u] }
    }

    #[test]
    fn interpolates_two_points_exactly() {
        let train = TrainingSet { pairs: vec![pair(0.05, 0.1), pair(0.0, 0.0)] };
        let mu = fit_controller(&train, 0.006).unwrap();
        assert!((mu.eval(&[0.05])[0] - 0.1).abs() <= 1e-8);
        assert_eq!(mu.eval(&[0.0])[0], 0.0);
    }

    #[test]
    fn odd_training_data_gives_odd_controller() {
        let xs = [0.01, 0.02, 0.035, 0.05];
        let mut pairs: Vec<_> = xs.iter().flat_map(|&x| [pair(x, 2.0 * x + x * x * 10.0), pair(-x, -(2.0 * x + x * x * 10.0))]).collect();
        pairs.push(pair(0.0, 0.0));
        let mu = fit_controller(&TrainingSet { pairs: pairs.clone() }, 0.01).unwrap();
        for p in &pairs {
            assert!((mu.eval(&p.state)[0] - p.control[0]).abs() <= 1e-8);
        }
        for x in [0.003, 0.017, 0.044, 0.06] {
            assert!((mu.eval(&[-x])[0] + mu.eval(&[x])[0]).abs() <= 1e-8);
        }
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_controller(&TrainingSet { pairs: vec![pair(0.0, 0.0)] }, 0.1).is_err());
        assert!(fit_controller(&TrainingSet { pairs: vec![pair(0.1, 0.0), pair(0.1, 1.0)] }, 0.1).is_err());
        assert!(fit_controller(&TrainingSet { pairs: vec![pair(0.1, 0.0), pair(0.0, 0.0)] }, 0.0).is_err());
    }

    #[test]
    fn longest_run_picks_first_widest() {
        use CellStatus::*;
        let col = [Rejected, Accepted, Accepted, Empty, Accepted, Accepted, Accepted, Rejected, Accepted, Accepted, Accepted];
        assert_eq!(longest_accepted_run(&col), Some((4, 3)));
        assert_eq!(longest_accepted_run(&[Rejected, Empty]), None);
        assert_eq!(longest_accepted_run(&[Accepted]), Some((0, 1)));
    }

    #[test]
    fn deepest_cell_in_two_control_axes() {
        use CellStatus::*;
        let grid = crate::rndd::Grid::new(
            crate::model::IntervalBox::new(vec![0.0, 0.0], vec![5.0, 5.0]).unwrap(),
            vec![5, 5],
        )
        .unwrap();
        let mut col = vec![Rejected; 25];
        for i in 1..4 {
            for j in 1..4 {
                col[grid.linear_index(&[i, j])] = Accepted;
            }
        }
        col[grid.linear_index(&[0, 0])] = Accepted;
        assert_eq!(deepest_accepted_cell(&col, &grid), grid.linear_index(&[2, 2]));
    }

    use crate::model::IntervalBox;
    use crate::rndd::{project_to_state, EstimateMeta, Grid};
    use crate::sampling::SampleSeed;

    /// 1x1 estimate on [-w, w]^2 from per-column lists of accepted control cells.
    fn estimate_from_columns(cells: usize, accepted: &[(usize, &[usize])]) -> RnddEstimate {
        let w = cells as f64 * 0.001;
        let grid = Grid::new(IntervalBox::new(vec![-w, -w], vec![w, w]).unwrap(), vec![cells, cells]).unwrap();
        let mut status = vec![CellStatus::Rejected; cells * cells];
        let mut members = vec![0u32; cells * cells];
        for (col, us) in accepted {
            for &u in *us {
                status[col * cells + u] = CellStatus::Accepted;
                members[col * cells + u] = 1;
            }
        }
        let meta = EstimateMeta { n: 1, m: 1, n_xu: cells * cells, n_xbar: 1, seed: SampleSeed(0) };
        RnddEstimate::from_parts(grid, status, vec![1; cells * cells], members, meta, Default::default()).unwrap()
    }

    #[test]
    fn chain_prefers_overlapping_runs() {
        // the wide run in the middle column overlaps neither neighbour's lower run
        let block = vec![vec![(2, 4), (10, 12)], vec![(3, 5), (11, 20)], vec![(11, 13)]];
        assert_eq!(chain_runs(&block), vec![(10, 12), (11, 20), (11, 13)]);
        // a connected chain beats a disconnected one with a wider last run
        let block = vec![vec![(0, 3)], vec![(2, 4), (6, 12)]];
        assert_eq!(chain_runs(&block), vec![(0, 3), (2, 4)]);
        let block = vec![vec![(0, 2)], vec![(4, 6)]];
        assert_eq!(chain_runs(&block), vec![(0, 2), (4, 6)]);
    }

    #[test]
    fn smoothing_stays_in_the_middle_half_of_each_band() {
        let nodes: Vec<(f64, (f64, f64))> =
            vec![(0.0, (0.0, 1.0)), (1.0, (0.0, 4.0)), (2.0, (3.0, 3.2)), (3.0, (-5.0, 5.0)), (4.0, (1.0, 2.0))];
        let t = smooth_in_bands(&nodes);
        for ((_, (lo, hi)), v) in nodes.iter().zip(&t) {
            let q = 0.25 * (hi - lo);
            assert!(*v >= lo + q - 1e-12 && *v <= hi - q + 1e-12, "{v} outside [{lo}, {hi}]");
        }
        // an unconstrained node ends on the line through its neighbours
        assert!((t[3] - 0.5 * (t[2] + t[4])).abs() < 1e-9);
    }

    #[test]
    fn corridor_pairs_sit_in_accepted_cells() {
        let cols: Vec<(usize, Vec<usize>)> = vec![
            (0, vec![1, 2, 3]),
            (1, vec![3, 4, 5]),
            (2, vec![5]),
            (3, vec![]),
            (6, vec![9, 10]),
            (7, vec![12, 13]),
        ];
        let spec: Vec<(usize, &[usize])> = cols.iter().map(|(c, u)| (*c, u.as_slice())).collect();
        let est = estimate_from_columns(20, &spec);
        let proj = project_to_state(&est).unwrap();
        let (train, breaks) = select_training_corridor(&est, &proj, 1).unwrap();
        assert_eq!(breaks, vec![7]);
        assert_eq!(train.anchor().state, vec![0.0]);
        for p in &train.pairs[..train.pairs.len() - 1] {
            let xu = [p.state[0], p.control[0]];
            assert_eq!(est.status_at(&xu), Some(CellStatus::Accepted), "{xu:?}");
        }
        // centers, interior faces and the two insets of each block
        assert_eq!(train.pairs.len(), (3 + 2 + 2) + (2 + 0 + 2) + 1);
    }

    #[test]
    fn corridor_rule_needs_scalar_state_and_control() {
        let g = Grid::new(IntervalBox::new(vec![-1.0; 3], vec![1.0; 3]).unwrap(), vec![2, 2, 2]).unwrap();
        let meta = EstimateMeta { n: 2, m: 1, n_xu: 8, n_xbar: 1, seed: SampleSeed(0) };
        let est = RnddEstimate::from_parts(g, vec![CellStatus::Accepted; 8], vec![1; 8], vec![1; 8], meta, Default::default())
            .unwrap();
        let proj = project_to_state(&est).unwrap();
        assert!(select_training_corridor(&est, &proj, 1).is_err());
    }
}
