use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robstab_cli::{exit, load_config, FailureKind, RunSummary, Runner, Stage};

#[derive(Parser)]
#[command(name = "robstab", version, about = "Robust DOA estimation and controller synthesis from sampled decrease tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify sampled state-control points and grid cells (cells.csv, estimate.json).
    Estimate(Common),
    /// Compute X0 and the largest certified level (doa.json); needs `estimate`.
    Doa(Common),
    /// Fit and verify the controller (training.csv, controller.json, verification.json); needs `doa`.
    Synth(Common),
    /// Closed-loop Monte-Carlo runs (trajectories.csv, sim.json); needs `synth`.
    Simulate(Common),
    /// All stages in order.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file, or the name of a bundled config (`example2`, `example2_ci`).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory; defaults to the config's `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, args) = match cli.command {
        Command::Estimate(a) => (Some(Stage::Estimate), a),
        Command::Doa(a) => (Some(Stage::Doa), a),
        Command::Synth(a) => (Some(Stage::Synth), a),
        Command::Simulate(a) => (Some(Stage::Simulate), a),
        Command::Pipeline(a) => (None, a),
    };
    ExitCode::from(run(stage, args) as u8)
}

fn run(stage: Option<Stage>, args: Common) -> i32 {
    let mut loaded = match load_config(&args.config) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return exit::CONFIG;
        }
    };
    if let Some(seed) = args.seed {
        loaded.config.seed = seed;
    }
    let out = args.out.unwrap_or_else(|| loaded.config.output.dir.clone());
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", args.threads);
            return exit::INTERNAL;
        }
    };

    let runner = Runner::new(&loaded, &out);
    let result = pool.install(|| match stage {
        Some(s) => runner.run(s),
        None => runner.run_all(),
    });
    match result {
        Ok(summary) => {
            report(&summary);
            if summary.verification_failed() {
                eprintln!("error: controller verification found violations (see {})", out.join("verification.json").display());
                exit::VERIFICATION
            } else {
                exit::OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind {
                FailureKind::Config => exit::CONFIG,
                FailureKind::Certification => exit::CERTIFICATION,
                FailureKind::Internal => exit::INTERNAL,
            }
        }
    }
}

fn report(s: &RunSummary) {
    if let Some(e) = &s.estimate {
        println!("estimate: {} accepted cells, {} flagged state cells", e.accepted_cells, e.flagged_state_cells);
    }
    if let Some(d) = &s.doa {
        println!(
            "doa: alpha* = {}, level set {:?}..{:?}, X0 {:?}..{:?}",
            d.alpha_star,
            d.level_set_bounds.lower(),
            d.level_set_bounds.upper(),
            d.x0_bounds.lower(),
            d.x0_bounds.upper()
        );
    }
    if let Some(c) = &s.controller {
        println!(
            "synth: {} training pairs, verification {} ({} violations of {})",
            c.training_pairs,
            if c.verification_pass { "passed" } else { "FAILED" },
            c.violations,
            c.n_verify
        );
    }
    if let Some(m) = &s.sim {
        println!(
            "simulate: {} trajectories, decrease {:.5}, invariant {}, converged {}",
            m.trajectories, m.decrease_fraction, m.invariant_trajectories, m.converged_trajectories
        );
    }
}
