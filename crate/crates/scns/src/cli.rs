//! The `scns` command-line tool.
//!
//! Four subcommands, one configuration format:
//!
//! - `run`      — one path; writes the ledger time series and state snapshots.
//! - `ensemble` — Monte Carlo ensemble; writes moment statistics (JSON) and a
//!   per-path summary table (CSV).
//! - `sweep`    — pathwise τ-refinement; writes the convergence table.
//! - `check`    — executes the invariant suite against the configuration and
//!   writes a machine-readable pass/fail report.
//!
//! Exit codes: 0 success, 1 a simulation or diagnostic failure, 2 a
//! configuration problem (parse error or rejected parameters). The
//! `SCNS_WORKERS` environment variable caps the worker-thread count; results
//! are byte-identical for any worker count.

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use std::fs;
use std::path::PathBuf;

use crate::config::RunConfig;
use crate::diagnostics::{
    energy_residual, martingale_test, mass_residual, moment_summary, unit_test_vector,
};
use crate::driver::{refine_tau_sweep, run_path, run_paths, RunOptions, Trajectory};
use crate::error::{Error, Result};
use crate::model::{validate_params, InitialData, SimParams};
use crate::output::{
    path_summary, path_summary_row, write_check_json, write_config_echo, write_ensemble_json,
    write_paths_csv, write_states_csv, write_sweep_csv, write_trajectory_csv, CheckOutcome,
    CheckReport, EnsembleArtifact,
};

pub const WORKERS_ENV: &str = "SCNS_WORKERS";
pub const EXIT_OK: i32 = 0;
pub const EXIT_DIAGNOSTIC: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "scns",
    version,
    about = "Stochastic compressible Navier-Stokes simulator (splitting scheme)"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Simulate one path and write its time series and snapshots
    Run(CommonArgs),
    /// Run a Monte Carlo ensemble and write moment statistics
    Ensemble(CommonArgs),
    /// Pathwise tau-refinement convergence table
    Sweep(CommonArgs),
    /// Execute the invariant suite and write a pass/fail report
    Check(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file
    #[arg(long)]
    pub config: PathBuf,
    /// Override the seed from the config file
    #[arg(long)]
    pub seed: Option<u64>,
    /// Artifact directory (created if missing)
    #[arg(long, default_value = "scns-out")]
    pub out: PathBuf,
}

/// Honor the worker-count override before any parallel region spins up.
/// Safe to call more than once; only the first global pool wins.
pub fn init_workers() {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring {WORKERS_ENV}={v} (want a positive integer)"),
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParams { .. } => EXIT_CONFIG,
        _ => EXIT_DIAGNOSTIC,
    }
}

/// Dispatch a parsed invocation; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let args = match &cli.cmd {
        Cmd::Run(a) | Cmd::Ensemble(a) | Cmd::Sweep(a) | Cmd::Check(a) => a,
    };
    let prepared = prepare(args);
    let (config, params, data) = match prepared {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = match &cli.cmd {
        Cmd::Run(a) => cmd_run(&config, &params, &data, a),
        Cmd::Ensemble(a) => cmd_ensemble(&config, &params, &data, a),
        Cmd::Sweep(a) => cmd_sweep(&config, &params, &data, a),
        Cmd::Check(a) => cmd_check(&config, &params, &data, a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn prepare(args: &CommonArgs) -> Result<(RunConfig, SimParams, InitialData)> {
    let mut config = RunConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let params = config.params();
    validate_params(&params)?;
    let data = config.initial_data()?;
    Ok((config, params, data))
}

fn run_options(config: &RunConfig) -> RunOptions {
    RunOptions {
        stride: config.output.stride,
        keep_states: config.output.keep_states,
        probe: None,
    }
}

fn cmd_run(
    config: &RunConfig,
    params: &SimParams,
    data: &InitialData,
    args: &CommonArgs,
) -> Result<i32> {
    let traj = run_path(params, data, 0, &run_options(config))?;
    write_config_echo(&args.out, config)?;
    let tpath = write_trajectory_csv(&args.out, &traj)?;
    let spath = write_states_csv(&args.out, &traj)?;
    println!(
        "run: {} samples, mass residual {:.3e}, energy residual {:.3e}",
        traj.samples.len(),
        mass_residual(&traj),
        energy_residual(&traj),
    );
    println!("wrote {} and {}", tpath.display(), spath.display());
    Ok(EXIT_OK)
}

fn cmd_ensemble(
    config: &RunConfig,
    params: &SimParams,
    data: &InitialData,
    args: &CommonArgs,
) -> Result<i32> {
    let n_paths = config.ensemble.n_paths;
    if n_paths < 2 {
        return Err(Error::Config(format!(
            "ensemble.n_paths must be at least 2, got {n_paths}"
        )));
    }
    if config.check.moment_orders.is_empty() {
        return Err(Error::Config("check.moment_orders must not be empty".into()));
    }
    let trajs = run_paths(params, data, n_paths, &run_options(config))?;

    // Workers drop their summaries as per-path temporaries; the merge walks
    // path indices in order, so the final table never depends on scheduling.
    let parts = args.out.join("parts");
    fs::create_dir_all(&parts)?;
    trajs.par_iter().try_for_each(|t| -> Result<()> {
        let row = path_summary_row(&path_summary(t));
        fs::write(parts.join(format!("path-{:06}.csv", t.path_index)), row)?;
        Ok(())
    })?;
    let mut rows = Vec::with_capacity(trajs.len());
    for i in 0..trajs.len() {
        rows.push(fs::read_to_string(parts.join(format!("path-{i:06}.csv")))?);
    }
    fs::remove_dir_all(&parts)?;

    let stats = moment_summary(&trajs, &config.check.moment_orders);
    write_config_echo(&args.out, config)?;
    let ppath = write_paths_csv(&args.out, config.seed, &rows)?;
    let jpath = write_ensemble_json(
        &args.out,
        &EnsembleArtifact { seed: config.seed, n_paths, config, stats: &stats },
    )?;
    println!("ensemble: {n_paths} paths, seed {}", config.seed);
    println!("wrote {} and {}", jpath.display(), ppath.display());
    Ok(EXIT_OK)
}

fn cmd_sweep(
    config: &RunConfig,
    params: &SimParams,
    data: &InitialData,
    args: &CommonArgs,
) -> Result<i32> {
    let sweep = refine_tau_sweep(params, data, config.sweep.levels, 0)?;
    write_config_echo(&args.out, config)?;
    let path = write_sweep_csv(&args.out, config.seed, &sweep)?;
    println!(
        "sweep: {} levels, density diffs {:?}",
        sweep.taus.len(),
        sweep.rho_diff_l2.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>(),
    );
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

/// Pathwise energy-residual budget: dt and grid truncation plus a realized
/// quadratic-variation fluctuation term for noisy runs.
fn energy_tolerance(params: &SimParams, e0: f64) -> f64 {
    let h = 1.0 / (params.grid_n as f64 - 1.0);
    let det = 2.0 * (params.dt_det + h * h) * (1.0 + e0);
    let stoch = 5.0 * params.noise.amp * (params.t_final * params.dt_st).sqrt() * (1.0 + e0);
    (1e-10_f64).max(det + stoch)
}

fn cmd_check(
    config: &RunConfig,
    params: &SimParams,
    data: &InitialData,
    args: &CommonArgs,
) -> Result<i32> {
    let n_paths = config.ensemble.n_paths;
    if n_paths < 2 {
        return Err(Error::Config(format!(
            "check needs ensemble.n_paths >= 2, got {n_paths}"
        )));
    }
    let opts = RunOptions { stride: 1, keep_states: false, probe: None };
    let trajs = run_paths(params, data, n_paths, &opts)?;
    let mut checks = Vec::new();

    let max_over = |f: &dyn Fn(&Trajectory) -> f64| -> f64 {
        trajs.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
    };

    let mass0 = trajs[0].samples[0].mass;
    let mass_worst = max_over(&|t| mass_residual(t));
    let mass_tol = 1e-10 * (1.0 + mass0.abs());
    checks.push(CheckOutcome {
        name: "mass_conservation".into(),
        passed: mass_worst <= mass_tol,
        value: mass_worst,
        threshold: mass_tol,
        detail: format!("max_t |Q(rho_t) - Q(rho_0)| over {n_paths} paths"),
    });

    let rho_floor = -max_over(&|t| {
        t.samples.iter().map(|s| -s.rho_min).fold(f64::NEG_INFINITY, f64::max)
    });
    checks.push(CheckOutcome {
        name: "positivity".into(),
        passed: rho_floor >= 0.0,
        value: rho_floor,
        threshold: 0.0,
        detail: "min node density over all paths and times".into(),
    });

    let e0 = trajs[0].samples[0].energy;
    let energy_worst = max_over(&|t| energy_residual(t));
    let energy_tol = energy_tolerance(params, e0);
    checks.push(CheckOutcome {
        name: "energy_identity".into(),
        passed: energy_worst <= energy_tol,
        value: energy_worst,
        threshold: energy_tol,
        detail: "max_t |E + D - W - I - E(0)| over all paths".into(),
    });

    // sample Jensen: E[X^2] >= (E[X])^2 must hold for every tracked moment
    let stats = moment_summary(&trajs, &[1, 2]);
    let jensen_gap = [
        &stats.sqrho_u_sup,
        &stats.rho_gamma_sup,
        &stats.u_h1,
        &stats.rho_beta_sup,
        &stats.grad_pressure,
    ]
    .iter()
    .map(|q| (q[1].mean - q[0].mean * q[0].mean) / (1.0 + q[0].mean * q[0].mean))
    .fold(f64::INFINITY, f64::min);
    checks.push(CheckOutcome {
        name: "moment_jensen".into(),
        passed: jensen_gap >= -1e-12,
        value: jensen_gap,
        threshold: -1e-12,
        detail: "min over moment quantities of (E[X^2] - E[X]^2) / (1 + E[X]^2)".into(),
    });

    if n_paths >= 100 {
        let phi = unit_test_vector(params, config.check.phi_index)?;
        let report = martingale_test(
            &trajs,
            &phi,
            &format!("coefficient {}", config.check.phi_index),
            config.check.martingale_s,
            config.check.martingale_t,
            config.check.martingale_mode,
        )?;
        let worst = report.z.iter().fold(0.0_f64, |a, z| a.max(z.abs()));
        checks.push(CheckOutcome {
            name: "martingale_structure".into(),
            passed: worst <= 4.0,
            value: worst,
            threshold: 4.0,
            detail: format!(
                "max |z| over increment/quadratic-variation/cross-variation tests, z = {:?}",
                report.z
            ),
        });
    }

    let passed = checks.iter().all(|c| c.passed);
    let report = CheckReport { seed: config.seed, n_paths, passed, checks };
    write_config_echo(&args.out, config)?;
    let path = write_check_json(&args.out, &report)?;
    for c in &report.checks {
        println!(
            "check {:<22} {} (value = {:+.3e}, threshold = {:+.3e})",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.value,
            c.threshold,
        );
    }
    println!(
        "check suite: {} ({}/{} passed); report at {}",
        if report.passed { "PASS" } else { "FAIL" },
        report.checks.iter().filter(|c| c.passed).count(),
        report.checks.len(),
        path.display(),
    );
    Ok(if report.passed { EXIT_OK } else { EXIT_DIAGNOSTIC })
}
