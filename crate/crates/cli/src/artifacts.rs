//! On-disk artifacts: bulk tables as CSV, everything else as pretty JSON.
//! Floats are written in Rust's shortest round-trip form, so equal inputs
//! give byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use robstab_core::rndd::{EstimateCounters, EstimateMeta};
use robstab_core::{
    CellStatus, ControllerModel, DoaResult, Grid, IntervalBox, RnddEstimate, SimReport, TrainingRule, TrainingSet,
    Trajectory, X0Region,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{ControllerSection, DoaSection, RunConfig, SimSection};

pub const CELLS_CSV: &str = "cells.csv";
pub const ESTIMATE_JSON: &str = "estimate.json";
pub const DOA_JSON: &str = "doa.json";
pub const TRAINING_CSV: &str = "training.csv";
pub const CONTROLLER_JSON: &str = "controller.json";
pub const VERIFICATION_JSON: &str = "verification.json";
pub const TRAJECTORIES_CSV: &str = "trajectories.csv";
pub const SIM_JSON: &str = "sim.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TIMINGS_JSON: &str = "timings.json";

/// Everything the estimate depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateInputs {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub fhat: Vec<String>,
    pub delta: Vec<String>,
    pub lyapunov: String,
    pub region: IntervalBox,
    pub cells_per_dim: Vec<usize>,
    pub n_xu: usize,
    pub n_xbar: usize,
}

impl EstimateInputs {
    pub fn from_config(c: &RunConfig) -> Self {
        Self {
            seed: c.seed,
            n: c.plant.n,
            m: c.plant.m,
            fhat: c.plant.fhat.clone(),
            delta: c.plant.delta.clone(),
            lyapunov: c.lyapunov.expr.clone(),
            region: IntervalBox::new(c.region.lower.clone(), c.region.upper.clone()).expect("validated region"),
            cells_per_dim: c.grid.cells_per_dim.clone(),
            n_xu: c.sampling.n_xu,
            n_xbar: c.sampling.n_xbar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDoc {
    pub inputs: EstimateInputs,
    pub meta: EstimateMeta,
    pub grid: Grid,
    pub counters: EstimateCounters,
    /// `N_xu (n + m) + N_xu N_xbar n`.
    pub expected_drawn_scalars: u64,
    pub accepted_cells: usize,
    pub rejected_cells: usize,
    pub empty_cells: usize,
    pub flagged_state_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaDoc {
    pub seed: u64,
    pub params: DoaSection,
    pub x0: X0Region,
    pub result: DoaResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerDoc {
    pub seed: u64,
    pub params: ControllerSection,
    pub rule: TrainingRule,
    pub bandwidth: f64,
    pub training_pairs: usize,
    /// State cells where the corridor rule could not continue its chain.
    pub breaks: Vec<usize>,
    pub mu_at_origin: Vec<f64>,
    pub max_training_residual: f64,
    pub model: ControllerModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationDoc {
    pub seed: u64,
    pub n_verify: usize,
    pub sampled: usize,
    pub passed: usize,
    pub pass: bool,
    pub violations: Vec<Vec<f64>>,
    pub drawn_scalars: u64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDoc {
    pub params: SimSection,
    pub report: SimReport,
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(path)
}

pub fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let f = File::open(&path).with_context(|| format!("missing artifact {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(f)).with_context(|| format!("malformed artifact {}", path.display()))
}

fn axis_names(n: usize, m: usize) -> Vec<String> {
    robstab_core::model::plant_variables(n, m)
}

/// One row per cell in linear order: per-axis index and bounds, status and counts.
pub fn write_cells(dir: &Path, est: &RnddEstimate) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(CELLS_CSV))?;
    let names = axis_names(est.meta.n, est.meta.m);
    let mut header = vec!["cell".to_string()];
    header.extend(names.iter().map(|v| format!("{v}_index")));
    for v in &names {
        header.push(format!("{v}_lo"));
        header.push(format!("{v}_hi"));
    }
    header.extend(["status", "points", "members"].map(String::from));
    w.write_record(&header)?;
    let grid = &est.grid;
    let mut row = Vec::with_capacity(header.len());
    for cell in 0..grid.n_cells() {
        let idx = grid.multi_index(cell);
        let b = grid.cell_box(&idx);
        row.clear();
        row.push(cell.to_string());
        row.extend(idx.iter().map(|i| i.to_string()));
        for a in 0..idx.len() {
            row.push(b.lower()[a].to_string());
            row.push(b.upper()[a].to_string());
        }
        row.push(est.status[cell].as_str().to_string());
        row.push(est.points_per_cell[cell].to_string());
        row.push(est.members_per_cell[cell].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimate(dir: &Path) -> Result<(EstimateDoc, RnddEstimate)> {
    let doc: EstimateDoc = read_json(dir, ESTIMATE_JSON)?;
    let nc = doc.grid.n_cells();
    let (mut status, mut points, mut members) = (Vec::with_capacity(nc), Vec::with_capacity(nc), Vec::with_capacity(nc));
    let path = dir.join(CELLS_CSV);
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("missing artifact {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).with_context(|| format!("{CELLS_CSV} lacks `{name}`"));
    let (cs, cp, cm, cc) = (col("status")?, col("points")?, col("members")?, col("cell")?);
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec[cc].parse::<usize>()? != i {
            bail!("{CELLS_CSV}: row {} is not cell {i}", i + 1);
        }
        status.push(CellStatus::parse(&rec[cs]).with_context(|| format!("{CELLS_CSV}: bad status `{}`", &rec[cs]))?);
        points.push(rec[cp].parse()?);
        members.push(rec[cm].parse()?);
    }
    let est = RnddEstimate::from_parts(doc.grid.clone(), status, points, members, doc.meta, doc.counters.clone())?;
    Ok((doc, est))
}

pub fn write_training(dir: &Path, train: &TrainingSet, n: usize, m: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(TRAINING_CSV))?;
    let mut header = vec!["index".to_string()];
    header.extend(axis_names(n, m));
    header.push("anchor".into());
    w.write_record(&header)?;
    let last = train.pairs.len() - 1;
    for (i, p) in train.pairs.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(p.state.iter().chain(&p.control).map(f64::to_string));
        row.push(u8::from(i == last).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectories(dir: &Path, trajs: &[Trajectory], n: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(TRAJECTORIES_CSV))?;
    let mut header = vec!["trajectory".to_string(), "k".into()];
    header.extend(robstab_core::model::state_variables(n));
    header.extend(["level", "in_level_set", "in_x0"].map(String::from));
    w.write_record(&header)?;
    for t in trajs {
        for (k, x) in t.states.iter().enumerate() {
            let mut row = vec![t.id.to_string(), k.to_string()];
            row.extend(x.iter().map(f64::to_string));
            row.push(t.levels[k].to_string());
            row.push(u8::from(t.in_level_set[k]).to_string());
            row.push(u8::from(t.in_x0[k]).to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
