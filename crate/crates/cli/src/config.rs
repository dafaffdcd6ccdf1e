use std::path::{Path, PathBuf};

use robstab_core::controller::DEFAULT_BANDWIDTH_CELLS;
use robstab_core::doa::{DEFAULT_N_LS, DEFAULT_TOL, DEFAULT_X0_CAP};
use robstab_core::sim::{DEFAULT_COUNT, DEFAULT_K_MAX};
use robstab_core::{ContainmentMethod, DoaParams, Grid, IntervalBox, LyapunovSpec, PlantSpec, TrainingRule};
use serde::{Deserialize, Serialize};

const BUILTINS: &[(&str, &str)] = &[
    ("example2", include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/example2.toml"))),
    ("example2_ci", include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/example2_ci.toml"))),
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}: line {line}, column {column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },
    #[error("{origin}: {message}")]
    Invalid { origin: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub plant: PlantSection,
    pub lyapunov: LyapunovSection,
    pub region: RegionSection,
    pub grid: GridSection,
    pub sampling: SamplingSection,
    #[serde(default)]
    pub doa: DoaSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub n: usize,
    pub m: usize,
    pub fhat: Vec<String>,
    pub delta: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub cells_per_dim: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub n_xu: usize,
    pub n_xbar: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    /// Interval check for one state, sampling otherwise.
    #[default]
    Auto,
    Sampled,
    Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoaSection {
    pub method: MethodChoice,
    pub n_ls: usize,
    pub tol: f64,
    pub x0_cap: f64,
    pub alpha_max: Option<f64>,
}

impl Default for DoaSection {
    fn default() -> Self {
        Self { method: MethodChoice::Auto, n_ls: DEFAULT_N_LS, tol: DEFAULT_TOL, x0_cap: DEFAULT_X0_CAP, alpha_max: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub rule: TrainingRule,
    pub stride: usize,
    /// Kernel bandwidth as a multiple of the largest state-cell size.
    pub bandwidth_cells: f64,
    pub n_verify: usize,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self { rule: TrainingRule::LongestRun, stride: 3, bandwidth_cells: DEFAULT_BANDWIDTH_CELLS, n_verify: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub count: usize,
    pub k_max: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { count: DEFAULT_COUNT, k_max: DEFAULT_K_MAX }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Parsed and checked models that the pipeline runs on.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub plant: PlantSpec,
    pub lyapunov: LyapunovSpec,
    pub grid: Grid,
}

impl RunConfig {
    pub fn builtin(name: &str) -> Option<Result<Loaded, ConfigError>> {
        BUILTINS.iter().find(|(n, _)| *n == name).map(|(n, text)| parse_config(text, &format!("builtin `{n}`")))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTINS.iter().map(|(n, _)| *n)
    }

    pub fn doa_params(&self) -> DoaParams {
        let method = match self.doa.method {
            MethodChoice::Auto if self.plant.n == 1 => ContainmentMethod::Interval,
            MethodChoice::Auto | MethodChoice::Sampled => ContainmentMethod::Sampled,
            MethodChoice::Interval => ContainmentMethod::Interval,
        };
        DoaParams { tol: self.doa.tol, alpha_max: self.doa.alpha_max, method, n_ls: self.doa.n_ls }
    }
}

/// Reads a config file. A path that does not exist but names a bundled
/// config (`example2`, `example2_ci`) loads the bundled one.
pub fn load_config(path: &Path) -> Result<Loaded, ConfigError> {
    if !path.exists() {
        if let Some(b) = path.to_str().and_then(RunConfig::builtin) {
            return b;
        }
    }
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_config(&text, &path.display().to_string())
}

pub fn parse_config(text: &str, origin: &str) -> Result<Loaded, ConfigError> {
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
        ConfigError::Parse { origin: origin.to_string(), line, column, message: e.message().to_string() }
    })?;
    validate(config).map_err(|message| ConfigError::Invalid { origin: origin.to_string(), message })
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

fn validate(config: RunConfig) -> Result<Loaded, String> {
    let RunConfig { plant: p, region, grid, sampling, doa, controller, sim, .. } = &config;
    if p.n == 0 || p.m == 0 {
        return Err("plant.n and plant.m must be at least 1".into());
    }
    let dim = p.n + p.m;
    if region.lower.len() != dim || region.upper.len() != dim {
        return Err(format!("region bounds need n + m = {dim} entries"));
    }
    if grid.cells_per_dim.len() != dim {
        return Err(format!("grid.cells_per_dim needs n + m = {dim} entries"));
    }
    if sampling.n_xu == 0 || sampling.n_xbar == 0 {
        return Err("sampling.n_xu and sampling.n_xbar must be at least 1".into());
    }
    if doa.n_ls == 0 && doa.method != MethodChoice::Interval && !(doa.method == MethodChoice::Auto && p.n == 1) {
        return Err("doa.n_ls must be at least 1 for sampled containment".into());
    }
    if doa.method == MethodChoice::Interval && p.n != 1 {
        return Err("doa.method = \"interval\" needs a single state".into());
    }
    if !(doa.tol > 0.0) || !(doa.x0_cap > 0.0 && doa.x0_cap <= 1.0) {
        return Err("doa.tol must be positive and doa.x0_cap in (0, 1]".into());
    }
    if let Some(a) = doa.alpha_max {
        if !(a > 0.0 && a.is_finite()) {
            return Err("doa.alpha_max must be positive".into());
        }
    }
    if controller.stride == 0 || !(controller.bandwidth_cells > 0.0 && controller.bandwidth_cells.is_finite()) {
        return Err("controller.stride must be at least 1 and controller.bandwidth_cells positive".into());
    }
    if controller.rule == TrainingRule::Corridor && (p.n != 1 || p.m != 1) {
        return Err("controller.rule = \"corridor\" needs one state and one control".into());
    }
    if sim.count == 0 || sim.k_max == 0 {
        return Err("sim.count and sim.k_max must be at least 1".into());
    }

    let plant = PlantSpec::new(p.n, p.m, &p.fhat, &p.delta).map_err(|e| e.to_string())?;
    let lyapunov = LyapunovSpec::new(p.n, &config.lyapunov.expr).map_err(|e| e.to_string())?;
    let region_box = IntervalBox::new(region.lower.clone(), region.upper.clone()).map_err(|e| format!("region: {e}"))?;
    if (0..dim).any(|a| region_box.width(a) <= 0.0) {
        return Err("region.lower must be strictly below region.upper".into());
    }
    let grid = Grid::new(region_box, grid.cells_per_dim.clone()).map_err(|e| format!("grid: {e}"))?;
    Ok(Loaded { config, plant, lyapunov, grid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_example_loads() {
        let l = RunConfig::builtin("example2").unwrap().unwrap();
        assert_eq!((l.config.plant.n, l.config.plant.m), (1, 1));
        assert_eq!(l.grid.cells_per_dim(), &[300, 300]);
        assert_eq!(l.config.sampling.n_xu, 1_000_000);
        assert_eq!(l.config.doa_params().method, ContainmentMethod::Interval);
        assert!(RunConfig::builtin("nope").is_none());
    }

    fn example_with(from: &str, to: &str) -> String {
        let text = BUILTINS[0].1;
        assert!(text.contains(from), "{from}");
        text.replace(from, to)
    }

    #[test]
    fn nonzero_error_bound_at_origin_is_rejected() {
        let text = example_with(
            "fhat = [\"-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1\"]\ndelta = [\"1 - exp(-2*(x1^2 + u1^2))\"]",
            "fhat = [\"-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2\"]\ndelta = [\"0.1 + 1 - exp(-2*(x1^2 + u1^2))\"]",
        );
        let err = parse_config(&text, "t").unwrap_err().to_string();
        assert!(err.contains("delta") || err.contains("error bound"), "{err}");
    }

    #[test]
    fn unknown_variable_is_named() {
        let err = parse_config(&example_with("expr = \"x1^2\"", "expr = \"x1^2 + x2^2\""), "t").unwrap_err().to_string();
        assert!(err.contains("x2"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_the_line() {
        let text = example_with("n_xbar = 200", "n_xbar = = 200");
        match parse_config(&text, "t").unwrap_err() {
            ConfigError::Parse { line, .. } => assert_eq!(line, text.lines().position(|l| l.contains("= =")).unwrap() + 1),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn semantic_checks() {
        for (from, to) in [
            ("cells_per_dim = [300, 300]", "cells_per_dim = [300]"),
            ("n_xu = 1_000_000", "n_xu = 0"),
            ("lower = [-0.3, -0.3]", "lower = [-0.3, 0.3]"),
            ("stride = 1", "stride = 0"),
            ("count = 1000", "count = 0"),
            ("seed = 8", "seed = 8\nextra = 1"),
        ] {
            assert!(parse_config(&example_with(from, to), "t").is_err(), "{to}");
        }
    }

    #[test]
    fn sections_have_defaults() {
        let text = BUILTINS[0].1;
        let cut = text.find("[doa]").unwrap();
        let l = parse_config(&text[..cut], "t").unwrap();
        assert_eq!(l.config.doa, DoaSection::default());
        assert_eq!(l.config.controller.rule, TrainingRule::LongestRun);
        assert_eq!(l.config.sim.k_max, 200);
    }
}
