use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use agile_core::calibration::{
    calibrate_combo_prior, calibrate_safety_prior, optimize_boundaries, BoundarySearchConfig,
};
use agile_core::config::{load_config, Design, RunConfig};
use agile_core::report::{
    emit_boundary_reports, emit_prior_reports, emit_reports, run_scenario_matrix, tuple,
};
use agile_core::scenario::{self, Scenario};
use agile_core::trial::run_trial_traced;
use agile_core::{Error, Result};

/// Simulation and calibration of a randomized Phase I/II dose-finding platform.
#[derive(Parser)]
#[command(name = "agile", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML), or the name of a shipped one such as
    /// `single-baseline`.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replication count (trajectories per hypothesis for
    /// `calibrate-boundaries`, runs per scenario for `calibrate-prior`).
    #[arg(long)]
    sims: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Operating characteristics over the configured scenario matrix.
    Simulate(Common),
    /// Efficacy stopping boundaries for each configured cohort structure.
    CalibrateBoundaries(Common),
    /// Safety-prior hyperparameters by grid search.
    CalibratePrior(Common),
    /// A single replication with its full event trace.
    RunOne {
        #[command(flatten)]
        common: Common,
        /// Scenario name, e.g. `single-0-1` or `combo-2-2`, or an inline
        /// scenario of the configuration.
        #[arg(long)]
        scenario: String,
    },
}

struct Prepared {
    cfg: RunConfig,
    out: PathBuf,
}

fn prepare(c: &Common) -> Result<Prepared> {
    let mut cfg = load_config(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = Some(seed);
    }
    if let Some(threads) = c.threads {
        cfg.threads = threads;
    }
    if let Some(sims) = c.sims {
        cfg.n_sims = sims;
        cfg.calibration.boundaries.trajectories = sims;
        cfg.calibration.safety_run.sims_per_scenario = sims;
    }
    cfg.validate()?;
    if cfg.threads > 0 {
        // calibration runs on the global pool; ignore a pool built earlier
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    Ok(Prepared { cfg, out })
}

fn simulate(c: &Common) -> Result<()> {
    let Prepared { cfg, out } = prepare(c)?;
    let matrix = run_scenario_matrix(&cfg)?;
    for cell in &matrix.cells {
        let o = &cell.oc;
        println!(
            "{:<14} rec {:<24} any {:5.1}  any-desirable {:>5}  N {:5.1}",
            o.scenario,
            tuple(&o.recommended_pct),
            o.any_recommended_pct,
            o.any_desirable_pct.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into()),
            o.mean_patients
        );
    }
    println!("mean sample size {:.1}", matrix.mean_patients());
    report_files(&emit_reports(&matrix, &cfg, &out)?);
    Ok(())
}

fn calibrate_boundaries(c: &Common) -> Result<()> {
    let Prepared { cfg, out } = prepare(c)?;
    let base = &cfg.calibration.boundaries;
    let reports = cfg
        .calibration
        .structures
        .iter()
        .map(|&[c1, c2, n_c]| {
            let search = BoundarySearchConfig {
                active_cohort: c1,
                control_cohort: c2,
                external_controls: n_c,
                ..base.clone()
            };
            let r = optimize_boundaries(&search, cfg.seed())?;
            let b = &r.best;
            println!(
                "({c1},{c2},{n_c}) l {:.3} u {:.3} power {:.3} type I {:.3} E(N0) {:.1} E(N1) {:.1} criterion {:.3}",
                b.lower, b.upper, b.power, b.type1, b.expected_n0, b.expected_n1, b.criterion
            );
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    report_files(&emit_boundary_reports(&reports, &out)?);
    Ok(())
}

fn calibrate_prior(c: &Common) -> Result<()> {
    let Prepared { cfg, out } = prepare(c)?;
    let cal = &cfg.calibration;
    let (result, names): (_, &[&str]) = match cfg.design {
        Design::Single { .. } => {
            let scenarios = cal
                .prior_scenarios
                .iter()
                .map(|&s| scenario::single_agent(s, 0))
                .collect::<Result<Vec<_>>>()?;
            (
                calibrate_safety_prior(&cal.prior_grid, &scenarios, &cal.safety_run, cfg.seed())?,
                &["nu", "mu2", "var1", "var2"],
            )
        }
        Design::Combination { .. } => {
            let scenarios = cal
                .prior_scenarios
                .iter()
                .map(|&s| scenario::combination(s, 0))
                .collect::<Result<Vec<_>>>()?;
            (
                calibrate_combo_prior(&cal.combo_grid, &scenarios, &cal.safety_run, cfg.seed())?,
                &["nu", "mu_slope", "var1", "var_slope", "var_eta"],
            )
        }
    };
    let pairs: Vec<String> = names
        .iter()
        .zip(&result.best.point)
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    println!(
        "selected {} geometric mean {:.3} over {} grid points",
        pairs.join(" "),
        result.best.geometric_mean,
        result.grid.len()
    );
    report_files(&emit_prior_reports(&result, names, &out)?);
    Ok(())
}

fn find_scenario(cfg: &RunConfig, name: &str) -> Result<Scenario> {
    if let Some(s) = cfg.scenarios.inline.iter().find(|s| s.name == name) {
        return Ok(s.clone());
    }
    let parts: Vec<&str> = name.split('-').collect();
    let parsed = match parts.as_slice() {
        [kind, s, e] => s.parse::<usize>().ok().zip(e.parse::<usize>().ok()).map(|(s, e)| (*kind, s, e)),
        _ => None,
    };
    match parsed {
        Some(("single", s, e)) => scenario::single_agent(s, e),
        Some(("combo", s, e)) => scenario::combination(s, e),
        _ => Err(Error::UnknownScenario(name.to_string())),
    }
}

fn run_one(c: &Common, name: &str) -> Result<()> {
    let Prepared { cfg, out } = prepare(c)?;
    let scenario = find_scenario(&cfg, name)?;
    let model = cfg.model()?;
    let result = run_trial_traced(&scenario, model.as_ref(), &cfg.trial, cfg.seed())?;
    for event in result.trace.iter().flatten() {
        println!("{}", serde_json::to_string(event)?);
    }
    println!(
        "recommended {:?}  patients {}  weeks {:.1}  safety stop {}",
        result.recommended,
        result.total_patients,
        result.duration_weeks(),
        result.stopped_for_safety
    );
    std::fs::create_dir_all(&out)?;
    let path = out.join(format!("run_one_{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&result)?)?;
    report_files(&[path]);
    Ok(())
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::CalibrateBoundaries(c) => calibrate_boundaries(c),
        Command::CalibratePrior(c) => calibrate_prior(c),
        Command::RunOne { common, scenario } => run_one(common, scenario),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

