//! Robust domain-of-attraction estimate: the origin gap `X0` left by the
//! projected estimate, level-set containment, and maximization of the level.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::bisect::bisect_last_true;
use crate::error::{Error, Result};
use crate::model::{IntervalBox, LyapunovSpec};
use crate::rndd::{Grid, StateProjection};
use crate::sampling::{SampleStream, StreamRng};

/// Default cap on the width of `X0` per axis, as a fraction of the state-region width.
pub const DEFAULT_X0_CAP: f64 = 0.05;
pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_N_LS: usize = 100_000;

/// Unflagged state cells connected to the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct X0Region {
    /// Sorted linear state-cell indices.
    pub cells: Vec<usize>,
    pub bounds: IntervalBox,
}

impl X0Region {
    pub fn contains_cell(&self, cell: usize) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    /// Whether `x` lies in one of the region's cells.
    pub fn contains(&self, grid: &Grid, x: &[f64]) -> bool {
        grid.locate_linear(x).is_some_and(|c| self.contains_cell(c))
    }
}

/// Flood fill (face adjacency) over unflagged state cells, starting from every
/// unflagged cell whose closure contains the origin.
pub fn compute_x0(proj: &StateProjection, cap_fraction: f64) -> Result<X0Region> {
    let grid = &proj.grid;
    let n = grid.dim();
    let region = grid.region();
    if !region.contains(&vec![0.0; n]) {
        return Err(Error::Certification("the origin lies outside the state region".into()));
    }

    let mut axis_seeds = Vec::with_capacity(n);
    for a in 0..n {
        let h = grid.cell_size()[a];
        let c = grid.cells_per_dim()[a];
        let t = ((0.0 - region.lower()[a]) / h).floor() as i64;
        let eps = 1e-9 * h;
        let seeds: Vec<usize> = (t - 1..=t + 1)
            .filter(|&k| k >= 0 && (k as usize) < c)
            .filter(|&k| {
                let lo = region.lower()[a] + k as f64 * h;
                lo <= eps && -eps <= lo + h
            })
            .map(|k| k as usize)
            .collect();
        axis_seeds.push(seeds);
    }
    let mut seeds = vec![Vec::new()];
    for axis in &axis_seeds {
        seeds = seeds
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                axis.iter().map(move |&k| {
                    let mut p = prefix.clone();
                    p.push(k);
                    p
                })
            })
            .collect();
    }

    let mut visited = vec![false; grid.n_cells()];
    let mut queue = VecDeque::new();
    for s in &seeds {
        let lin = grid.linear_index(s);
        if !proj.flags[lin] && !visited[lin] {
            visited[lin] = true;
            queue.push_back(lin);
        }
    }
    if queue.is_empty() {
        return Ok(X0Region { cells: Vec::new(), bounds: IntervalBox::point(&vec![0.0; n])? });
    }

    let mut cells = Vec::new();
    let mut lo_idx = vec![usize::MAX; n];
    let mut hi_idx = vec![0; n];
    while let Some(lin) = queue.pop_front() {
        cells.push(lin);
        let multi = grid.multi_index(lin);
        for a in 0..n {
            let c = grid.cells_per_dim()[a];
            if multi[a] == 0 || multi[a] + 1 == c {
                return Err(Error::Certification("the uncovered origin neighborhood reaches the state-region boundary".into()));
            }
            lo_idx[a] = lo_idx[a].min(multi[a]);
            hi_idx[a] = hi_idx[a].max(multi[a]);
            let width = (hi_idx[a] - lo_idx[a] + 1) as f64 * grid.cell_size()[a];
            if width > cap_fraction * region.width(a) + 1e-12 {
                return Err(Error::Certification(format!(
                    "the uncovered origin neighborhood is {width} wide on axis {a}, above the cap of {cap_fraction} of the region width"
                )));
            }
            for next in [multi[a] - 1, multi[a] + 1] {
                let mut nb = multi.clone();
                nb[a] = next;
                let nl = grid.linear_index(&nb);
                if !proj.flags[nl] && !visited[nl] {
                    visited[nl] = true;
                    queue.push_back(nl);
                }
            }
        }
    }
    cells.sort_unstable();
    let lower = grid.cell_lower(&lo_idx);
    let upper: Vec<f64> =
        hi_idx.iter().enumerate().map(|(a, &i)| region.lower()[a] + (i + 1) as f64 * grid.cell_size()[a]).collect();
    Ok(X0Region { cells, bounds: IntervalBox::new(lower, upper)? })
}

fn covered(proj: &StateProjection, x0: &X0Region, x: &[f64]) -> bool {
    match proj.grid.locate_linear(x) {
        Some(c) => proj.flags[c] || x0.contains_cell(c),
        None => false,
    }
}

/// Sampled containment test: `n_ls` points uniform on the state region; every
/// point with `L(x) <= alpha` must lie in a flagged cell or in `X0`.
pub fn level_set_contained(
    lyap: &LyapunovSpec,
    alpha: f64,
    proj: &StateProjection,
    x0: &X0Region,
    n_ls: usize,
    stream: SampleStream,
) -> Result<bool> {
    if alpha < 0.0 {
        return Err(Error::Invalid(format!("alpha = {alpha} must be non-negative")));
    }
    Ok(LevelSetSamples::draw(lyap, proj, x0, n_ls, stream)?.contained(alpha))
}

/// Containment points drawn once and reused across levels, so that all levels
/// are judged on the same points.
#[derive(Debug, Clone)]
pub struct LevelSetSamples {
    points: Vec<Vec<f64>>,
    levels: Vec<f64>,
    covered: Vec<bool>,
    /// Smallest level over uncovered points; containment holds strictly below it.
    min_uncovered: f64,
    pub drawn: u64,
}

impl LevelSetSamples {
    pub fn draw(
        lyap: &LyapunovSpec,
        proj: &StateProjection,
        x0: &X0Region,
        n_ls: usize,
        stream: SampleStream,
    ) -> Result<Self> {
        let region = proj.grid.region();
        let mut rng = stream.rng();
        let mut points = Vec::with_capacity(n_ls);
        let mut levels = Vec::with_capacity(n_ls);
        let mut cov = Vec::with_capacity(n_ls);
        let mut min_uncovered = f64::INFINITY;
        for _ in 0..n_ls {
            let mut p = vec![0.0; region.dim()];
            rng.fill_uniform(region.lower(), region.upper(), &mut p);
            let level = lyap.eval(&p)?;
            let c = covered(proj, x0, &p);
            if !c {
                min_uncovered = min_uncovered.min(level);
            }
            points.push(p);
            levels.push(level);
            cov.push(c);
        }
        Ok(Self { points, levels, covered: cov, min_uncovered, drawn: rng.drawn() })
    }

    pub fn contained(&self, alpha: f64) -> bool {
        alpha < self.min_uncovered
    }

    /// Bounding box of the sampled points inside the level set.
    fn level_bounds(&self, alpha: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut out: Option<(Vec<f64>, Vec<f64>)> = None;
        for (p, _) in self.points.iter().zip(&self.levels).filter(|(_, l)| **l <= alpha) {
            let (lo, hi) = out.get_or_insert_with(|| (p.clone(), p.clone()));
            for (k, v) in p.iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn covered_fraction(&self) -> f64 {
        self.covered.iter().filter(|&&c| c).count() as f64 / self.covered.len().max(1) as f64
    }
}

/// The connected piece `[a, b]` around 0 of `{x : L(x) <= alpha}` for a scalar
/// state, or `None` when it reaches the edge of `region`.
pub fn level_interval(lyap: &LyapunovSpec, alpha: f64, region: &IntervalBox, step: f64) -> Result<Option<(f64, f64)>> {
    let mut ends = [0.0; 2];
    for (k, (dir, limit)) in [(-1.0, region.lower()[0]), (1.0, region.upper()[0])].into_iter().enumerate() {
        let reach = limit.abs();
        let mut inside = 0.0;
        let mut outside = None;
        let mut t = 0.0;
        while t < reach {
            t = (t + step).min(reach);
            if lyap.eval(&[dir * t])? > alpha {
                outside = Some(t);
                break;
            }
            inside = t;
        }
        let Some(mut out) = outside else {
            return Ok(None);
        };
        for _ in 0..200 {
            let mid = 0.5 * (inside + out);
            if mid <= inside || mid >= out {
                break;
            }
            if lyap.eval(&[dir * mid])? > alpha {
                out = mid;
            } else {
                inside = mid;
            }
        }
        ends[k] = dir * inside;
    }
    Ok(Some((ends[0], ends[1])))
}

/// Deterministic containment for a scalar state: every cell meeting the level
/// interval around the origin must be flagged or belong to `X0`.
pub fn level_set_contained_interval(
    lyap: &LyapunovSpec,
    alpha: f64,
    proj: &StateProjection,
    x0: &X0Region,
) -> Result<bool> {
    if proj.grid.dim() != 1 {
        return Err(Error::Invalid("interval containment requires a scalar state".into()));
    }
    if alpha < 0.0 {
        return Err(Error::Invalid(format!("alpha = {alpha} must be non-negative")));
    }
    let step = proj.grid.cell_size()[0] / 16.0;
    let Some((a, b)) = level_interval(lyap, alpha, proj.grid.region(), step)? else {
        return Ok(false);
    };
    let (Some(ia), Some(ib)) = (proj.grid.locate_linear(&[a]), proj.grid.locate_linear(&[b])) else {
        return Ok(false);
    };
    Ok((ia..=ib).all(|c| proj.flags[c] || x0.contains_cell(c)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainmentMethod {
    /// Uniform sampling on the state region (any state dimension).
    Sampled,
    /// Exact interval endpoints against cell flags (scalar state only).
    Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaParams {
    pub tol: f64,
    /// Upper end of the search; defaults to the largest `L` over the state-region corners.
    pub alpha_max: Option<f64>,
    pub method: ContainmentMethod,
    pub n_ls: usize,
}

impl Default for DoaParams {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, alpha_max: None, method: ContainmentMethod::Sampled, n_ls: DEFAULT_N_LS }
    }
}

impl DoaParams {
    /// Interval containment for scalar states, sampling otherwise.
    pub fn auto(n: usize) -> Self {
        let method = if n == 1 { ContainmentMethod::Interval } else { ContainmentMethod::Sampled };
        Self { method, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaResult {
    pub alpha_star: f64,
    /// Box enclosing the certified level set.
    pub level_set_bounds: IntervalBox,
    pub x0_bounds: IntervalBox,
    pub x0_cells: usize,
    pub method: ContainmentMethod,
    pub n_ls: usize,
    pub tol: f64,
    pub alpha_max: f64,
    /// Smallest level found to fail containment (`alpha_star + tol` or less).
    pub alpha_fail: Option<f64>,
    pub containment_evaluations: usize,
    pub drawn_scalars: u64,
    pub warning: Option<String>,
}

/// Bisection for the largest level whose level set fits in the projected
/// estimate plus `X0`.
pub fn maximize_alpha(
    lyap: &LyapunovSpec,
    proj: &StateProjection,
    x0: &X0Region,
    params: &DoaParams,
    stream: SampleStream,
) -> Result<DoaResult> {
    if !(params.tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance {} must be positive", params.tol)));
    }
    let n = proj.grid.dim();
    let region = proj.grid.region();
    let alpha_max = match params.alpha_max {
        Some(a) => a,
        None => region.max_over_corners(|c| lyap.eval(c))?,
    };
    if !(alpha_max > 0.0) {
        return Err(Error::Invalid(format!("alpha_max = {alpha_max} must be positive")));
    }

    let samples = match params.method {
        ContainmentMethod::Sampled => Some(LevelSetSamples::draw(lyap, proj, x0, params.n_ls, stream)?),
        ContainmentMethod::Interval => {
            if n != 1 {
                return Err(Error::Invalid("interval containment requires a scalar state".into()));
            }
            None
        }
    };
    let mut evaluations = 0usize;
    let mut contained = |alpha: f64| -> Result<bool> {
        evaluations += 1;
        match &samples {
            Some(s) => Ok(s.contained(alpha)),
            None => level_set_contained_interval(lyap, alpha, proj, x0),
        }
    };

    let tol = params.tol.min(alpha_max);
    let (alpha_star, alpha_fail, warning) = if !contained(tol)? {
        (0.0, Some(tol), Some("no nontrivial DOA certified".to_string()))
    } else if contained(alpha_max)? {
        (alpha_max, None, None)
    } else {
        let (pass, fail) = bisect_last_true(tol, alpha_max, params.tol, &mut contained)?;
        (pass, Some(fail), None)
    };

    let level_set_bounds = match &samples {
        None => {
            let step = proj.grid.cell_size()[0] / 16.0;
            match level_interval(lyap, alpha_star, region, step)? {
                Some((a, b)) => IntervalBox::new(vec![a], vec![b])?,
                None => region.clone(),
            }
        }
        Some(s) => match s.level_bounds(alpha_star) {
            Some((lo, hi)) => {
                let lower = (0..n).map(|a| (lo[a] - proj.grid.cell_size()[a]).max(region.lower()[a])).collect();
                let upper = (0..n).map(|a| (hi[a] + proj.grid.cell_size()[a]).min(region.upper()[a])).collect();
                IntervalBox::new(lower, upper)?
            }
            None => IntervalBox::point(&vec![0.0; n])?,
        },
    };

    Ok(DoaResult {
        alpha_star,
        level_set_bounds,
        x0_bounds: x0.bounds.clone(),
        x0_cells: x0.cells.len(),
        method: params.method,
        n_ls: if samples.is_some() { params.n_ls } else { 0 },
        tol: params.tol,
        alpha_max,
        alpha_fail,
        containment_evaluations: evaluations,
        drawn_scalars: samples.as_ref().map_or(0, |s| s.drawn),
        warning,
    })
}

/// Rejection sampler for `{x in bounds : L(x) <= alpha}`, optionally skipping `X0`.
pub struct LevelSetSampler<'a> {
    pub lyap: &'a LyapunovSpec,
    pub alpha: f64,
    pub bounds: &'a IntervalBox,
    pub exclude: Option<(&'a Grid, &'a X0Region)>,
    pub max_attempts: usize,
}

impl LevelSetSampler<'_> {
    /// One accepted state from `rng`, or `None` after `max_attempts` rejections.
    pub fn sample(&self, rng: &mut StreamRng) -> Result<Option<Vec<f64>>> {
        let mut x = vec![0.0; self.bounds.dim()];
        for _ in 0..self.max_attempts {
            rng.fill_uniform(self.bounds.lower(), self.bounds.upper(), &mut x);
            if self.lyap.eval(&x)? > self.alpha {
                continue;
            }
            if let Some((grid, x0)) = self.exclude {
                if x0.contains(grid, &x) || x.iter().all(|v| *v == 0.0) {
                    continue;
                }
            }
            return Ok(Some(x));
        }
        Ok(None)
    }
}
