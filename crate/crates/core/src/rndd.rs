//! Sampling-and-grid estimate of the robust negative-definite domain.
//!
//! A state-control point `(x; u)` is robustly decreasing for `L` when every
//! possible next state `xbar` in the future-state box satisfies
//! `L(xbar) - L(x) < 0`. The estimator
//!
//! 1. draws `N_xu` points uniformly on the region of interest,
//! 2. draws `N_xbar` next states uniformly on each point's future-state box,
//! 3. labels a point a member when all of its next states strictly decrease `L`,
//! 4. accepts the grid cells whose sample points are all members, and
//! 5. projects the accepted cells along the control axes onto the state grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IntervalBox, LyapunovSpec, PlantSpec};
use crate::sampling::{Purpose, SampleSeed, SampleStream};

/// Uniform partition of a box. Cells are half-open `[low, high)` on every axis
/// except that points on the upper face belong to the last cell of that axis.
/// Linear cell indices are row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    region: IntervalBox,
    cells_per_dim: Vec<usize>,
    cell_size: Vec<f64>,
}

impl Grid {
    pub fn new(region: IntervalBox, cells_per_dim: Vec<usize>) -> Result<Self> {
        if cells_per_dim.len() != region.dim() {
            return Err(Error::Dimension { expected: region.dim(), got: cells_per_dim.len() });
        }
        if cells_per_dim.contains(&0) {
            return Err(Error::Invalid("every axis needs at least one cell".into()));
        }
        for axis in 0..region.dim() {
            if region.width(axis) <= 0.0 {
                return Err(Error::Invalid(format!("grid region axis {axis} has zero width")));
            }
        }
        let cell_size = (0..region.dim()).map(|a| region.width(a) / cells_per_dim[a] as f64).collect();
        Ok(Self { region, cells_per_dim, cell_size })
    }

    pub fn region(&self) -> &IntervalBox {
        &self.region
    }

    pub fn cells_per_dim(&self) -> &[usize] {
        &self.cells_per_dim
    }

    pub fn cell_size(&self) -> &[f64] {
        &self.cell_size
    }

    pub fn dim(&self) -> usize {
        self.cells_per_dim.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_dim.iter().product()
    }

    /// Multi-index of the cell holding `point`.
    pub fn locate_cell(&self, point: &[f64]) -> Result<Vec<usize>> {
        if point.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: point.len() });
        }
        if !self.region.contains(point) {
            return Err(Error::OutsideRegion { point: point.to_vec() });
        }
        Ok((0..self.dim()).map(|a| self.axis_index(a, point[a])).collect())
    }

    /// Linear index of the cell holding `point`, `None` outside the region.
    pub fn locate_linear(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.dim() || !self.region.contains(point) {
            return None;
        }
        Some((0..self.dim()).fold(0, |acc, a| acc * self.cells_per_dim[a] + self.axis_index(a, point[a])))
    }

    fn axis_index(&self, axis: usize, v: f64) -> usize {
        let k = ((v - self.region.lower()[axis]) / self.cell_size[axis]).floor();
        (k.max(0.0) as usize).min(self.cells_per_dim[axis] - 1)
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.cells_per_dim).fold(0, |acc, (i, c)| acc * c + i)
    }

    pub fn multi_index(&self, mut linear: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = linear % self.cells_per_dim[a];
            linear /= self.cells_per_dim[a];
        }
        out
    }

    pub fn cell_lower(&self, multi: &[usize]) -> Vec<f64> {
        multi.iter().enumerate().map(|(a, &i)| self.region.lower()[a] + i as f64 * self.cell_size[a]).collect()
    }

    pub fn cell_center(&self, multi: &[usize]) -> Vec<f64> {
        multi.iter().enumerate().map(|(a, &i)| self.region.lower()[a] + (i as f64 + 0.5) * self.cell_size[a]).collect()
    }

    pub fn cell_box(&self, multi: &[usize]) -> IntervalBox {
        let lower = self.cell_lower(multi);
        let upper = lower.iter().zip(&self.cell_size).map(|(l, s)| l + s).collect();
        IntervalBox::new(lower, upper).expect("cell box of a valid grid")
    }

    /// The grid restricted to the leading `k` axes.
    pub fn leading(&self, k: usize) -> Result<Grid> {
        Grid::new(self.region.slice(0..k)?, self.cells_per_dim[..k].to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Empty,
    Accepted,
    Rejected,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Empty => "empty",
            CellStatus::Accepted => "accepted",
            CellStatus::Rejected => "rejected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "empty" => Some(CellStatus::Empty),
            "accepted" => Some(CellStatus::Accepted),
            "rejected" => Some(CellStatus::Rejected),
            _ => None,
        }
    }

    /// Join on the lattice `Empty < Accepted < Rejected`.
    fn absorb(self, member: bool) -> Self {
        match (self, member) {
            (CellStatus::Rejected, _) | (_, false) => CellStatus::Rejected,
            _ => CellStatus::Accepted,
        }
    }
}

/// The first sampled next state that failed to decrease `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub sample_index: u64,
    pub state: Vec<f64>,
    /// `L(xbar) - L(x)`, always `>= 0`.
    pub delta_l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointClass {
    pub member: bool,
    pub witness: Option<Witness>,
    /// Decrease checks actually evaluated before deciding.
    pub checks: u64,
}

/// Robust decrease test of one state-control point against `n_xbar` sampled
/// next states. Sample `j` occupies scalars `j*n .. (j+1)*n` of `stream`.
pub fn classify_point(
    plant: &PlantSpec,
    lyap: &LyapunovSpec,
    x: &[f64],
    u: &[f64],
    n_xbar: usize,
    stream: SampleStream,
) -> Result<PointClass> {
    if x.len() != plant.n() {
        return Err(Error::Dimension { expected: plant.n(), got: x.len() });
    }
    if u.len() != plant.m() {
        return Err(Error::Dimension { expected: plant.m(), got: u.len() });
    }
    if n_xbar == 0 {
        return Err(Error::Invalid("n_xbar must be at least 1".into()));
    }
    let xu: Vec<f64> = x.iter().chain(u).copied().collect();
    if xu.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("non-finite state-control point {xu:?}")));
    }
    classify_xu(plant, lyap, &xu, n_xbar, stream, &mut Scratch::new(plant.n()))
}

struct Scratch {
    lo: Vec<f64>,
    hi: Vec<f64>,
    xbar: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self { lo: vec![0.0; n], hi: vec![0.0; n], xbar: vec![0.0; n] }
    }
}

fn classify_xu(
    plant: &PlantSpec,
    lyap: &LyapunovSpec,
    xu: &[f64],
    n_xbar: usize,
    stream: SampleStream,
    s: &mut Scratch,
) -> Result<PointClass> {
    let n = plant.n();
    let lx = lyap.eval(&xu[..n])?;
    plant.future_box_into(xu, &mut s.lo, &mut s.hi)?;
    let mut rng = stream.rng();
    for j in 0..n_xbar {
        rng.fill_uniform(&s.lo, &s.hi, &mut s.xbar);
        let d = lyap.eval(&s.xbar)? - lx;
        if !(d < 0.0) {
            return Ok(PointClass {
                member: false,
                witness: Some(Witness { sample_index: j as u64, state: s.xbar.clone(), delta_l: d }),
                checks: j as u64 + 1,
            });
        }
    }
    Ok(PointClass { member: true, witness: None, checks: n_xbar as u64 })
}

/// Random-number and verification bookkeeping of the estimate stage.
///
/// `future_state_scalars` and `decrease_checks` are nominal: every point
/// reserves its full `N_xbar * n` block of its stream whether or not the test
/// stopped at the first failing sample. The `_evaluated` fields count work
/// actually done.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateCounters {
    pub region_scalars: u64,
    pub future_state_scalars: u64,
    pub future_state_scalars_evaluated: u64,
    pub decrease_checks: u64,
    pub decrease_checks_evaluated: u64,
    pub cell_checks: u64,
}

impl EstimateCounters {
    /// Scalars drawn for region points and next states: `N_xu (n + m) + N_xu N_xbar n`.
    pub fn drawn_scalars(&self) -> u64 {
        self.region_scalars + self.future_state_scalars
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateMeta {
    pub n: usize,
    pub m: usize,
    pub n_xu: usize,
    pub n_xbar: usize,
    pub seed: SampleSeed,
}

/// State-control sample points with their membership labels.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub meta: EstimateMeta,
    coords: Vec<f64>,
    pub members: Vec<bool>,
    /// Present exactly for non-members.
    pub witnesses: Vec<Option<Witness>>,
    pub counters: EstimateCounters,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.meta.n + self.meta.m;
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn member_count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }
}

/// Draws the state-control sample set on `region` and labels every point.
pub fn build_filtered_set(
    plant: &PlantSpec,
    lyap: &LyapunovSpec,
    region: &IntervalBox,
    n_xu: usize,
    n_xbar: usize,
    seed: SampleSeed,
) -> Result<LabeledSet> {
    let (n, m) = (plant.n(), plant.m());
    if region.dim() != n + m {
        return Err(Error::Dimension { expected: n + m, got: region.dim() });
    }
    if lyap.n() != n {
        return Err(Error::Dimension { expected: n, got: lyap.n() });
    }
    if n_xu == 0 || n_xbar == 0 {
        return Err(Error::Invalid("n_xu and n_xbar must be at least 1".into()));
    }
    let d = n + m;
    let labeled: Vec<(Vec<f64>, PointClass)> = (0..n_xu)
        .into_par_iter()
        .map_init(
            || Scratch::new(n),
            |scratch, i| {
                let mut xu = vec![0.0; d];
                SampleStream::new(seed, Purpose::RegionPoints, i as u64).rng().fill_uniform(
                    region.lower(),
                    region.upper(),
                    &mut xu,
                );
                let fs = SampleStream::new(seed, Purpose::FutureStates, i as u64);
                let class = classify_xu(plant, lyap, &xu, n_xbar, fs, scratch)?;
                Ok((xu, class))
            },
        )
        .collect::<Result<_>>()?;

    let mut coords = Vec::with_capacity(n_xu * d);
    let mut members = Vec::with_capacity(n_xu);
    let mut witnesses = Vec::with_capacity(n_xu);
    let mut evaluated = 0u64;
    for (xu, class) in labeled {
        coords.extend_from_slice(&xu);
        members.push(class.member);
        witnesses.push(class.witness);
        evaluated += class.checks;
    }
    let (n_xu64, n_xbar64) = (n_xu as u64, n_xbar as u64);
    Ok(LabeledSet {
        meta: EstimateMeta { n, m, n_xu, n_xbar, seed },
        coords,
        members,
        witnesses,
        counters: EstimateCounters {
            region_scalars: n_xu64 * d as u64,
            future_state_scalars: n_xu64 * n_xbar64 * n as u64,
            future_state_scalars_evaluated: evaluated * n as u64,
            decrease_checks: n_xu64 * n_xbar64,
            decrease_checks_evaluated: evaluated,
            cell_checks: 0,
        },
    })
}

/// Grid classification of a labeled sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnddEstimate {
    pub grid: Grid,
    pub status: Vec<CellStatus>,
    pub points_per_cell: Vec<u32>,
    pub members_per_cell: Vec<u32>,
    pub accepted_count: usize,
    pub meta: EstimateMeta,
    pub counters: EstimateCounters,
}

impl RnddEstimate {
    /// Reassembles an estimate from its per-cell tables, recomputing the
    /// accepted count and checking the status invariants.
    pub fn from_parts(
        grid: Grid,
        status: Vec<CellStatus>,
        points_per_cell: Vec<u32>,
        members_per_cell: Vec<u32>,
        meta: EstimateMeta,
        counters: EstimateCounters,
    ) -> Result<Self> {
        let nc = grid.n_cells();
        if status.len() != nc || points_per_cell.len() != nc || members_per_cell.len() != nc {
            return Err(Error::Invalid(format!("estimate tables must have {nc} cells")));
        }
        if grid.dim() != meta.n + meta.m {
            return Err(Error::Dimension { expected: meta.n + meta.m, got: grid.dim() });
        }
        for i in 0..nc {
            let (p, mbr) = (points_per_cell[i], members_per_cell[i]);
            let expected = match (p, mbr == p) {
                (0, _) => CellStatus::Empty,
                (_, true) => CellStatus::Accepted,
                _ => CellStatus::Rejected,
            };
            if status[i] != expected || mbr > p {
                return Err(Error::Invalid(format!("cell {i}: status {:?} inconsistent with {mbr}/{p} members", status[i])));
            }
        }
        let accepted_count = status.iter().filter(|s| **s == CellStatus::Accepted).count();
        Ok(Self { grid, status, points_per_cell, members_per_cell, accepted_count, meta, counters })
    }

    pub fn status_at(&self, point: &[f64]) -> Option<CellStatus> {
        self.grid.locate_linear(point).map(|i| self.status[i])
    }

    /// Number of control cells stacked over each state cell.
    pub fn control_cells(&self) -> usize {
        self.grid.cells_per_dim()[self.meta.n..].iter().product()
    }
}

/// Marks every cell by the lattice join of its points' labels.
pub fn classify_cells(labeled: &LabeledSet, grid: &Grid) -> Result<RnddEstimate> {
    let d = labeled.meta.n + labeled.meta.m;
    if grid.dim() != d {
        return Err(Error::Dimension { expected: d, got: grid.dim() });
    }
    let nc = grid.n_cells();
    let mut status = vec![CellStatus::Empty; nc];
    let mut points = vec![0u32; nc];
    let mut members = vec![0u32; nc];
    for i in 0..labeled.len() {
        let p = labeled.point(i);
        let c = grid.locate_linear(p).ok_or_else(|| Error::OutsideRegion { point: p.to_vec() })?;
        let member = labeled.members[i];
        status[c] = status[c].absorb(member);
        points[c] += 1;
        members[c] += member as u32;
    }
    let accepted_count = status.iter().filter(|s| **s == CellStatus::Accepted).count();
    let mut counters = labeled.counters.clone();
    counters.cell_checks = nc as u64;
    Ok(RnddEstimate {
        grid: grid.clone(),
        status,
        points_per_cell: points,
        members_per_cell: members,
        accepted_count,
        meta: labeled.meta,
        counters,
    })
}

/// Steps 1-4 in one call.
pub fn estimate(
    plant: &PlantSpec,
    lyap: &LyapunovSpec,
    grid: &Grid,
    n_xu: usize,
    n_xbar: usize,
    seed: SampleSeed,
) -> Result<(LabeledSet, RnddEstimate)> {
    let labeled = build_filtered_set(plant, lyap, grid.region(), n_xu, n_xbar, seed)?;
    let est = classify_cells(&labeled, grid)?;
    Ok((labeled, est))
}

/// Accepted cells projected along the control axes onto the state grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateProjection {
    pub grid: Grid,
    pub flags: Vec<bool>,
}

impl StateProjection {
    pub fn flagged_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_flagged(&self, state: &[f64]) -> bool {
        self.grid.locate_linear(state).is_some_and(|i| self.flags[i])
    }
}

pub fn project_to_state(est: &RnddEstimate) -> Result<StateProjection> {
    let grid = est.grid.leading(est.meta.n)?;
    let per = est.control_cells();
    let flags = est.status.chunks(per).map(|col| col.contains(&CellStatus::Accepted)).collect();
    Ok(StateProjection { grid, flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LyapunovSpec;

    fn example_grid() -> Grid {
        Grid::new(IntervalBox::new(vec![-0.3, -0.3], vec![0.3, 0.3]).unwrap(), vec![300, 300]).unwrap()
    }

    fn example1() -> (PlantSpec, LyapunovSpec) {
        (
            PlantSpec::new(1, 1, &["-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1"], &["1 - exp(-2*(x1^2 + u1^2))"])
                .unwrap(),
            LyapunovSpec::new(1, "x1^2").unwrap(),
        )
    }

    #[test]
    fn grid_geometry() {
        let g = example_grid();
        assert_eq!(g.n_cells(), 90_000);
        assert!(g.cell_size().iter().all(|s| (s - 0.002).abs() < 1e-15));
        assert_eq!(g.locate_cell(&[-0.3, -0.3]).unwrap(), vec![0, 0]);
        assert_eq!(g.locate_cell(&[0.3, 0.3]).unwrap(), vec![299, 299]);
        assert_eq!(g.locate_cell(&[-0.3 + 0.001, -0.3 + 0.003]).unwrap(), vec![0, 1]);
        assert!(matches!(g.locate_cell(&[0.31, 0.0]), Err(Error::OutsideRegion { .. })));
        assert!(g.locate_cell(&[f64::NAN, 0.0]).is_err());
        for lin in [0, 1, 299, 300, 45_123, 89_999] {
            assert_eq!(g.linear_index(&g.multi_index(lin)), lin);
        }
        assert_eq!(g.locate_linear(&g.cell_center(&[12, 200])), Some(g.linear_index(&[12, 200])));
    }

    #[test]
    fn classify_point_matches_exact_test() {
        let (plant, l) = example1();
        let s = SampleStream::new(SampleSeed(1), Purpose::User, 0);
        assert!(classify_point(&plant, &l, &[0.05], &[0.1346], 200, s).unwrap().member);
        let c = classify_point(&plant, &l, &[0.05], &[0.02], 200, s).unwrap();
        assert!(!c.member);
        let w = c.witness.unwrap();
        assert!(w.delta_l >= 0.0);
        assert_eq!(w.sample_index, 0);
        let c = classify_point(&plant, &l, &[0.0], &[0.0], 200, s).unwrap();
        assert!(!c.member);
        assert_eq!(c.witness.unwrap().delta_l, 0.0);
    }

    #[test]
    fn counters_follow_draw_formula() {
        let (plant, l) = example1();
        let region = IntervalBox::new(vec![-0.3, -0.3], vec![0.3, 0.3]).unwrap();
        let set = build_filtered_set(&plant, &l, &region, 2_000, 50, SampleSeed(5)).unwrap();
        assert_eq!(set.counters.drawn_scalars(), 2_000 * 2 + 2_000 * 50);
        assert_eq!(set.counters.decrease_checks, 2_000 * 50);
        assert!(set.counters.decrease_checks_evaluated <= set.counters.decrease_checks);
        for i in 0..set.len() {
            assert_eq!(set.members[i], set.witnesses[i].is_none());
            assert!(region.contains(set.point(i)));
        }
    }

    #[test]
    fn no_members_where_decrease_is_impossible() {
        let (plant, l) = example1();
        let region = IntervalBox::new(vec![0.2, 0.2], vec![0.3, 0.3]).unwrap();
        let set = build_filtered_set(&plant, &l, &region, 1, 200, SampleSeed(3)).unwrap();
        assert_eq!(set.member_count(), 0);
        let set = build_filtered_set(&plant, &l, &region, 500, 200, SampleSeed(3)).unwrap();
        assert_eq!(set.member_count(), 0);
    }

    fn handmade(points: &[(f64, f64, bool)]) -> LabeledSet {
        LabeledSet {
            meta: EstimateMeta { n: 1, m: 1, n_xu: points.len(), n_xbar: 1, seed: SampleSeed(0) },
            coords: points.iter().flat_map(|p| [p.0, p.1]).collect(),
            members: points.iter().map(|p| p.2).collect(),
            witnesses: points
                .iter()
                .map(|p| (!p.2).then(|| Witness { sample_index: 0, state: vec![0.0], delta_l: 0.0 }))
                .collect(),
            counters: EstimateCounters::default(),
        }
    }

    #[test]
    fn cell_status_rules() {
        let g = Grid::new(IntervalBox::new(vec![0.0, 0.0], vec![4.0, 2.0]).unwrap(), vec![4, 2]).unwrap();
        let set = handmade(&[(0.5, 0.5, true), (0.6, 0.4, true), (1.5, 0.5, true), (1.5, 0.7, false), (3.5, 1.5, false)]);
        let est = classify_cells(&set, &g).unwrap();
        assert_eq!(est.status[g.linear_index(&[0, 0])], CellStatus::Accepted);
        assert_eq!(est.status[g.linear_index(&[1, 0])], CellStatus::Rejected);
        assert_eq!(est.status[g.linear_index(&[3, 1])], CellStatus::Rejected);
        assert_eq!(est.status[g.linear_index(&[2, 0])], CellStatus::Empty);
        assert_eq!(est.accepted_count, 1);
        assert_eq!(est.counters.cell_checks, 8);

        let proj = project_to_state(&est).unwrap();
        assert_eq!(proj.flags, vec![true, false, false, false]);

        let outside = handmade(&[(5.0, 0.5, true)]);
        assert!(matches!(classify_cells(&outside, &g), Err(Error::OutsideRegion { .. })));
    }

    #[test]
    fn projection_of_nothing_is_empty() {
        let g = Grid::new(IntervalBox::new(vec![0.0, 0.0], vec![4.0, 2.0]).unwrap(), vec![4, 2]).unwrap();
        let est = classify_cells(&handmade(&[(0.5, 0.5, false)]), &g).unwrap();
        assert_eq!(project_to_state(&est).unwrap().flagged_count(), 0);
    }

    #[test]
    fn from_parts_rejects_inconsistent_tables() {
        let g = Grid::new(IntervalBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(), vec![1, 1]).unwrap();
        let meta = EstimateMeta { n: 1, m: 1, n_xu: 1, n_xbar: 1, seed: SampleSeed(0) };
        let ok = RnddEstimate::from_parts(g.clone(), vec![CellStatus::Accepted], vec![2], vec![2], meta, Default::default());
        assert_eq!(ok.unwrap().accepted_count, 1);
        let bad = RnddEstimate::from_parts(g, vec![CellStatus::Accepted], vec![2], vec![1], meta, Default::default());
        assert!(bad.is_err());
    }
}
