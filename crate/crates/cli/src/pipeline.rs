use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use robstab_core::controller::{fit_controller, select_training_corridor, select_training_points, verify_controller};
use robstab_core::doa::{compute_x0, maximize_alpha};
use robstab_core::rndd::{estimate, project_to_state};
use robstab_core::sim::simulate_batch;
use robstab_core::{
    CellStatus, ControllerModel, Error as CoreError, IntervalBox, Purpose, SampleSeed, SampleStream, TrainingRule,
};
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::Loaded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Estimate,
    Doa,
    Synth,
    Simulate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Estimate, Stage::Doa, Stage::Synth, Stage::Simulate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Estimate => "estimate",
            Stage::Doa => "doa",
            Stage::Synth => "synth",
            Stage::Simulate => "simulate",
        }
    }

    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Estimate => &[CELLS_CSV, ESTIMATE_JSON],
            Stage::Doa => &[DOA_JSON],
            Stage::Synth => &[TRAINING_CSV, CONTROLLER_JSON, VERIFICATION_JSON],
            Stage::Simulate => &[TRAJECTORIES_CSV, SIM_JSON],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Bad or inconsistent configuration, including artifacts from another config.
    Config,
    /// The estimate cannot certify a nontrivial DOA.
    Certification,
    Internal,
}

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}`: {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub kind: FailureKind,
    pub message: String,
}

impl StageError {
    fn new(stage: Stage, kind: FailureKind, message: impl Into<String>) -> Self {
        Self { stage: stage.name(), kind, message: message.into() }
    }

    fn core(stage: Stage, e: CoreError) -> Self {
        let kind = match e {
            CoreError::Certification(_) => FailureKind::Certification,
            CoreError::Expr { .. } | CoreError::Model(_) | CoreError::Lyapunov(_) => FailureKind::Config,
            _ => FailureKind::Internal,
        };
        Self::new(stage, kind, e.to_string())
    }

    fn io(stage: Stage, e: anyhow::Error) -> Self {
        Self::new(stage, FailureKind::Internal, format!("{e:#}"))
    }
}

type StageResult<T> = Result<T, StageError>;

/// Runs stages against one output directory. Each stage reads what it needs
/// from earlier stages' artifacts in that directory.
pub struct Runner<'a> {
    pub loaded: &'a Loaded,
    pub out: PathBuf,
}

impl<'a> Runner<'a> {
    pub fn new(loaded: &'a Loaded, out: impl Into<PathBuf>) -> Self {
        Self { loaded, out: out.into() }
    }

    fn seed(&self) -> SampleSeed {
        SampleSeed(self.loaded.config.seed)
    }

    /// Runs `stage`, then rewrites the summary from every artifact present.
    /// Artifacts of this and all later stages are removed first, so the
    /// directory never mixes results from different upstream runs.
    pub fn run(&self, stage: Stage) -> StageResult<RunSummary> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| StageError::new(stage, FailureKind::Internal, format!("creating {}: {e}", self.out.display())))?;
        for later in Stage::ALL.into_iter().filter(|s| *s >= stage) {
            for name in later.artifacts() {
                match std::fs::remove_file(self.out.join(name)) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(e) => return Err(StageError::new(stage, FailureKind::Internal, format!("removing {name}: {e}"))),
                }
            }
        }
        let t = Instant::now();
        let outcome = match stage {
            Stage::Estimate => self.estimate(),
            Stage::Doa => self.doa(),
            Stage::Synth => self.synth(),
            Stage::Simulate => self.simulate(),
        };
        let elapsed = t.elapsed().as_secs_f64();
        record_timing(&self.out, stage, elapsed).map_err(|e| StageError::io(stage, e))?;
        let summary = summarize(&self.out).map_err(|e| StageError::io(stage, e));
        outcome?;
        summary
    }

    pub fn run_all(&self) -> StageResult<RunSummary> {
        let mut summary = None;
        for stage in Stage::ALL {
            summary = Some(self.run(stage)?);
        }
        Ok(summary.expect("at least one stage"))
    }

    fn estimate(&self) -> StageResult<()> {
        let s = Stage::Estimate;
        let l = self.loaded;
        let c = &l.config;
        let (_, est) = estimate(&l.plant, &l.lyapunov, &l.grid, c.sampling.n_xu, c.sampling.n_xbar, self.seed())
            .map_err(|e| StageError::core(s, e))?;
        let proj = project_to_state(&est).map_err(|e| StageError::core(s, e))?;
        let count = |st| est.status.iter().filter(|x| **x == st).count();
        let (n, m) = (c.plant.n as u64, c.plant.m as u64);
        let n_xu = c.sampling.n_xu as u64;
        let doc = EstimateDoc {
            inputs: EstimateInputs::from_config(c),
            meta: est.meta,
            grid: est.grid.clone(),
            counters: est.counters.clone(),
            expected_drawn_scalars: n_xu * (n + m) + n_xu * c.sampling.n_xbar as u64 * n,
            accepted_cells: est.accepted_count,
            rejected_cells: count(CellStatus::Rejected),
            empty_cells: count(CellStatus::Empty),
            flagged_state_cells: proj.flagged_count(),
        };
        write_cells(&self.out, &est).map_err(|e| StageError::io(s, e))?;
        write_json(&self.out, ESTIMATE_JSON, &doc).map_err(|e| StageError::io(s, e))?;
        Ok(())
    }

    fn load_estimate(&self, stage: Stage) -> StageResult<(EstimateDoc, robstab_core::RnddEstimate)> {
        let (doc, est) = read_estimate(&self.out).map_err(|e| StageError::new(stage, FailureKind::Config, format!("{e:#}")))?;
        if doc.inputs != EstimateInputs::from_config(&self.loaded.config) {
            return Err(StageError::new(
                stage,
                FailureKind::Config,
                format!("{} in {} was produced by a different configuration; rerun `estimate`", ESTIMATE_JSON, self.out.display()),
            ));
        }
        Ok((doc, est))
    }

    fn load_doc<T: serde::de::DeserializeOwned>(&self, stage: Stage, name: &str) -> StageResult<T> {
        read_json(&self.out, name).map_err(|e| StageError::new(stage, FailureKind::Config, format!("{e:#}")))
    }

    fn stale(&self, stage: Stage, name: &str, upstream: &str) -> StageError {
        StageError::new(
            stage,
            FailureKind::Config,
            format!("{name} in {} does not match the configuration; rerun `{upstream}`", self.out.display()),
        )
    }

    fn doa(&self) -> StageResult<()> {
        let s = Stage::Doa;
        let l = self.loaded;
        let (_, est) = self.load_estimate(s)?;
        let proj = project_to_state(&est).map_err(|e| StageError::core(s, e))?;
        let x0 = compute_x0(&proj, l.config.doa.x0_cap).map_err(|e| StageError::core(s, e))?;
        let stream = SampleStream::new(self.seed(), Purpose::LevelSet, 0);
        let result =
            maximize_alpha(&l.lyapunov, &proj, &x0, &l.config.doa_params(), stream).map_err(|e| StageError::core(s, e))?;
        let alpha_star = result.alpha_star;
        let doc = DoaDoc { seed: l.config.seed, params: l.config.doa.clone(), x0, result };
        write_json(&self.out, DOA_JSON, &doc).map_err(|e| StageError::io(s, e))?;
        if alpha_star <= 0.0 {
            return Err(StageError::new(s, FailureKind::Certification, "no nontrivial level set fits in the estimate"));
        }
        Ok(())
    }

    fn load_doa(&self, stage: Stage) -> StageResult<DoaDoc> {
        let doc: DoaDoc = self.load_doc(stage, DOA_JSON)?;
        if doc.params != self.loaded.config.doa || doc.seed != self.loaded.config.seed {
            return Err(self.stale(stage, DOA_JSON, "doa"));
        }
        Ok(doc)
    }

    fn synth(&self) -> StageResult<()> {
        let s = Stage::Synth;
        let l = self.loaded;
        let cfg = &l.config.controller;
        let (_, est) = self.load_estimate(s)?;
        let doa = self.load_doa(s)?;
        let proj = project_to_state(&est).map_err(|e| StageError::core(s, e))?;
        let (train, breaks) = match cfg.rule {
            TrainingRule::LongestRun => (select_training_points(&est, &proj, cfg.stride), Vec::new()),
            TrainingRule::Corridor => match select_training_corridor(&est, &proj, cfg.stride) {
                Ok((t, b)) => (Ok(t), b),
                Err(e) => (Err(e), Vec::new()),
            },
        };
        let train = train.map_err(|e| StageError::core(s, e))?;
        let cell = proj.grid.cell_size().iter().copied().fold(0.0, f64::max);
        let bandwidth = cfg.bandwidth_cells * cell;
        let model = fit_controller(&train, bandwidth).map_err(|e| StageError::core(s, e))?;
        let residual = max_residual(&model, &train);
        write_training(&self.out, &train, l.config.plant.n, l.config.plant.m).map_err(|e| StageError::io(s, e))?;

        let report =
            verify_controller(&model, &est, &l.lyapunov, &doa.result, &doa.x0, cfg.n_verify, self.seed())
                .map_err(|e| StageError::core(s, e))?;
        let cdoc = ControllerDoc {
            seed: l.config.seed,
            params: cfg.clone(),
            rule: cfg.rule,
            bandwidth,
            training_pairs: train.pairs.len(),
            breaks,
            mu_at_origin: model.eval(&vec![0.0; l.config.plant.n]),
            max_training_residual: residual,
            model,
        };
        let vdoc = VerificationDoc {
            seed: l.config.seed,
            n_verify: report.n_verify,
            sampled: report.states.len(),
            passed: report.passed.iter().filter(|p| **p).count(),
            pass: report.pass(),
            violations: report.violations,
            drawn_scalars: report.drawn_scalars,
            warning: report.warning,
        };
        write_json(&self.out, CONTROLLER_JSON, &cdoc).map_err(|e| StageError::io(s, e))?;
        write_json(&self.out, VERIFICATION_JSON, &vdoc).map_err(|e| StageError::io(s, e))?;
        Ok(())
    }

    fn simulate(&self) -> StageResult<()> {
        let s = Stage::Simulate;
        let l = self.loaded;
        let (_, est) = self.load_estimate(s)?;
        let doa = self.load_doa(s)?;
        let cdoc: ControllerDoc = self.load_doc(s, CONTROLLER_JSON)?;
        if cdoc.params != l.config.controller || cdoc.seed != l.config.seed {
            return Err(self.stale(s, CONTROLLER_JSON, "synth"));
        }
        let sim = &l.config.sim;
        let (report, trajs) =
            simulate_batch(&l.plant, &l.lyapunov, &cdoc.model, &doa.result, Some(&est), sim.count, sim.k_max, self.seed())
                .map_err(|e| StageError::core(s, e))?;
        write_trajectories(&self.out, &trajs, l.config.plant.n).map_err(|e| StageError::io(s, e))?;
        write_json(&self.out, SIM_JSON, &SimDoc { params: sim.clone(), report }).map_err(|e| StageError::io(s, e))?;
        Ok(())
    }
}

fn max_residual(model: &ControllerModel, train: &robstab_core::TrainingSet) -> f64 {
    train
        .pairs
        .iter()
        .flat_map(|p| model.eval(&p.state).into_iter().zip(&p.control).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

fn record_timing(out: &Path, stage: Stage, seconds: f64) -> anyhow::Result<()> {
    let mut t: BTreeMap<Stage, f64> = read_json(out, TIMINGS_JSON).unwrap_or_default();
    t.insert(stage, seconds);
    write_json(out, TIMINGS_JSON, &t)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub accepted_cells: usize,
    pub rejected_cells: usize,
    pub empty_cells: usize,
    pub flagged_state_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaSummary {
    pub alpha_star: f64,
    pub level_set_bounds: IntervalBox,
    pub x0_bounds: IntervalBox,
    pub x0_cells: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub rule: TrainingRule,
    pub training_pairs: usize,
    pub breaks: Vec<usize>,
    pub bandwidth: f64,
    pub mu_at_origin: Vec<f64>,
    pub max_training_residual: f64,
    pub verification_pass: bool,
    pub n_verify: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub trajectories: usize,
    pub k_max: usize,
    pub decrease_fraction: f64,
    pub invariant_trajectories: usize,
    pub converged_trajectories: usize,
    pub final_in_x0: usize,
    pub noise_bound_violations: u64,
}

/// Random scalars drawn per stage, plus the estimate's check counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCounters {
    pub region_scalars: u64,
    pub future_state_scalars: u64,
    pub estimate_scalars: u64,
    /// `N_xu (n + m) + N_xu N_xbar n`.
    pub estimate_scalars_expected: u64,
    pub decrease_checks: u64,
    pub decrease_checks_expected: u64,
    pub doa_scalars: u64,
    pub verify_scalars: u64,
    pub sim_scalars: u64,
    pub total: u64,
}

/// Deterministic digest of a run directory (no wall-clock values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: Option<u64>,
    pub stages: Vec<Stage>,
    pub estimate: Option<EstimateSummary>,
    pub doa: Option<DoaSummary>,
    pub controller: Option<ControllerSummary>,
    pub sim: Option<SimSummary>,
    pub rng: RngCounters,
}

impl RunSummary {
    pub fn verification_failed(&self) -> bool {
        self.controller.as_ref().is_some_and(|c| !c.verification_pass)
    }
}

fn optional<T: serde::de::DeserializeOwned>(out: &Path, name: &str) -> anyhow::Result<Option<T>> {
    if out.join(name).exists() {
        read_json(out, name).map(Some)
    } else {
        Ok(None)
    }
}

/// Rebuilds `summary.json` from the stage artifacts in `out`.
pub fn summarize(out: &Path) -> anyhow::Result<RunSummary> {
    let est: Option<EstimateDoc> = optional(out, ESTIMATE_JSON)?;
    let doa: Option<DoaDoc> = optional(out, DOA_JSON)?;
    let ctrl: Option<ControllerDoc> = optional(out, CONTROLLER_JSON)?;
    let ver: Option<VerificationDoc> = optional(out, VERIFICATION_JSON)?;
    let sim: Option<SimDoc> = optional(out, SIM_JSON)?;

    let mut stages = Vec::new();
    let mut rng = RngCounters::default();
    if let Some(e) = &est {
        stages.push(Stage::Estimate);
        rng.region_scalars = e.counters.region_scalars;
        rng.future_state_scalars = e.counters.future_state_scalars;
        rng.estimate_scalars = e.counters.drawn_scalars();
        rng.estimate_scalars_expected = e.expected_drawn_scalars;
        rng.decrease_checks = e.counters.decrease_checks;
        rng.decrease_checks_expected = e.inputs.n_xu as u64 * e.inputs.n_xbar as u64;
    }
    if let Some(d) = &doa {
        stages.push(Stage::Doa);
        rng.doa_scalars = d.result.drawn_scalars;
    }
    if ctrl.is_some() && ver.is_some() {
        stages.push(Stage::Synth);
    }
    if let Some(v) = &ver {
        rng.verify_scalars = v.drawn_scalars;
    }
    if let Some(s) = &sim {
        stages.push(Stage::Simulate);
        rng.sim_scalars = s.report.drawn_scalars;
    }
    rng.total = rng.estimate_scalars + rng.doa_scalars + rng.verify_scalars + rng.sim_scalars;

    let summary = RunSummary {
        seed: est.as_ref().map(|e| e.inputs.seed),
        stages,
        estimate: est.as_ref().map(|e| EstimateSummary {
            accepted_cells: e.accepted_cells,
            rejected_cells: e.rejected_cells,
            empty_cells: e.empty_cells,
            flagged_state_cells: e.flagged_state_cells,
        }),
        doa: doa.as_ref().map(|d| DoaSummary {
            alpha_star: d.result.alpha_star,
            level_set_bounds: d.result.level_set_bounds.clone(),
            x0_bounds: d.x0.bounds.clone(),
            x0_cells: d.x0.cells.len(),
            warning: d.result.warning.clone(),
        }),
        controller: ctrl.as_ref().zip(ver.as_ref()).map(|(c, v)| ControllerSummary {
            rule: c.rule,
            training_pairs: c.training_pairs,
            breaks: c.breaks.clone(),
            bandwidth: c.bandwidth,
            mu_at_origin: c.mu_at_origin.clone(),
            max_training_residual: c.max_training_residual,
            verification_pass: v.pass,
            n_verify: v.n_verify,
            violations: v.violations.len(),
        }),
        sim: sim.as_ref().map(|s| SimSummary {
            trajectories: s.report.trajectories,
            k_max: s.report.k_max,
            decrease_fraction: s.report.decrease_fraction,
            invariant_trajectories: s.report.invariant_trajectories,
            converged_trajectories: s.report.converged_trajectories,
            final_in_x0: s.report.final_in_x0,
            noise_bound_violations: s.report.noise_bound_violations,
        }),
        rng,
    };
    write_json(out, SUMMARY_JSON, &summary)?;
    Ok(summary)
}
