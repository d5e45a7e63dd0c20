//! Artifact writers: CSV time series and JSON reports.
//!
//! Every writer is a pure function of its in-memory inputs — no timestamps,
//! no machine names, no float formatting that depends on locale — so a rerun
//! with the same configuration and seed produces byte-identical files
//! regardless of worker count or host. Headers carry the seed and enough
//! column description to make the files self-contained.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::basis::build_basis;
use crate::config::RunConfig;
use crate::diagnostics::{energy_ledger, mass_residual, energy_residual};
use crate::driver::{path_moment_scalars, EnsembleStats, TauSweep, Trajectory};
use crate::error::Result;
use crate::grid::component;

/// Canonical float formatting: Rust's shortest round-trip representation.
fn num(x: f64) -> String {
    format!("{x}")
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

/// Ledger time series of one path → `trajectory.csv`.
pub fn write_trajectory_csv(dir: &Path, traj: &Trajectory) -> Result<PathBuf> {
    let ledger = energy_ledger(traj);
    let mut out = String::new();
    out.push_str("# one row per sampled tau-boundary; energy ledger columns are running totals\n");
    let _ = writeln!(out, "# seed = {}, path_index = {}", traj.params.seed, traj.path_index);
    out.push_str(
        "time,mass,kinetic,potential,energy,dissipation,ito,work,ledger_residual,\
         rho_min,rho_max,div_exponent,h1_time,grad_pressure\n",
    );
    for (s, row) in traj.samples.iter().zip(&ledger.rows) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            num(s.t),
            num(s.mass),
            num(s.kinetic),
            num(s.potential),
            num(s.energy),
            num(row.dissipation),
            num(row.ito),
            num(row.work),
            num(row.residual),
            num(s.rho_min),
            num(s.rho_max),
            num(s.div_exponent),
            num(s.h1_time),
            num(s.grad_pressure),
        );
    }
    write_file(dir, "trajectory.csv", &out)
}

/// Nodal state snapshots → `states.csv`: every sample that stored a density
/// (all of them under `keep_states`, otherwise just the final state).
pub fn write_states_csv(dir: &Path, traj: &Trajectory) -> Result<PathBuf> {
    let params = &traj.params;
    let grid = params.grid()?;
    let basis = build_basis(grid, params.n_modes, params.d)?;
    let len = grid.len();
    let mut out = String::new();
    out.push_str("# nodal density and velocity snapshots\n");
    let _ = writeln!(out, "# seed = {}, path_index = {}", params.seed, traj.path_index);
    if grid.d == 1 {
        out.push_str("time,node,x,rho,u_x\n");
    } else {
        out.push_str("time,node,x,y,rho,u_x,u_y\n");
    }
    let mut blocks: Vec<(f64, &[f64], Vec<f64>)> = Vec::new();
    let stored: Vec<_> = traj.samples.iter().filter(|s| s.rho.is_some()).collect();
    if stored.is_empty() {
        blocks.push((
            traj.final_state.t,
            &traj.final_state.rho.values,
            basis.evaluate(&traj.final_state.u),
        ));
    } else {
        for s in stored {
            blocks.push((s.t, s.rho.as_ref().unwrap(), basis.evaluate(&s.u)));
        }
    }
    for (t, rho, u_nodal) in blocks {
        for i in 0..len {
            let [x, y] = grid.coord(i);
            if grid.d == 1 {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    num(t),
                    i,
                    num(x),
                    num(rho[i]),
                    num(component(&u_nodal, len, 0)[i]),
                );
            } else {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    num(t),
                    i,
                    num(x),
                    num(y),
                    num(rho[i]),
                    num(component(&u_nodal, len, 0)[i]),
                    num(component(&u_nodal, len, 1)[i]),
                );
            }
        }
    }
    write_file(dir, "states.csv", &out)
}

/// One row of the per-path ensemble summary.
#[derive(Debug, Clone, Serialize)]
pub struct PathSummary {
    pub path_index: u64,
    pub sup_sqrho_u_l2: f64,
    pub sup_rho_lgamma: f64,
    pub h1_time: f64,
    pub scaled_sup_rho_lbeta: f64,
    pub grad_pressure: f64,
    pub final_energy: f64,
    pub mass_residual: f64,
    pub energy_residual: f64,
}

pub fn path_summary(traj: &Trajectory) -> PathSummary {
    let [a, b, c, d, e] = path_moment_scalars(traj);
    PathSummary {
        path_index: traj.path_index,
        sup_sqrho_u_l2: a,
        sup_rho_lgamma: b,
        h1_time: c,
        scaled_sup_rho_lbeta: d,
        grad_pressure: e,
        final_energy: traj.samples.last().expect("samples").energy,
        mass_residual: mass_residual(traj),
        energy_residual: energy_residual(traj),
    }
}

pub const PATHS_CSV_HEADER: &str = "path_index,sup_sqrho_u_l2,sup_rho_lgamma,h1_time,\
     scaled_sup_rho_lbeta,grad_pressure,final_energy,mass_residual,energy_residual";

/// Format one summary as a CSV row (no newline).
pub fn path_summary_row(s: &PathSummary) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        s.path_index,
        num(s.sup_sqrho_u_l2),
        num(s.sup_rho_lgamma),
        num(s.h1_time),
        num(s.scaled_sup_rho_lbeta),
        num(s.grad_pressure),
        num(s.final_energy),
        num(s.mass_residual),
        num(s.energy_residual),
    )
}

/// Merge per-path summary rows (already ordered by index) → `paths.csv`.
pub fn write_paths_csv(dir: &Path, seed: u64, rows: &[String]) -> Result<PathBuf> {
    let mut out = String::new();
    out.push_str("# per-path summary of an ensemble run\n");
    let _ = writeln!(out, "# seed = {}", seed);
    out.push_str(PATHS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    write_file(dir, "paths.csv", &out)
}

/// Ensemble statistics artifact: seed, configuration echo, estimates.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleArtifact<'a> {
    pub seed: u64,
    pub n_paths: usize,
    pub config: &'a RunConfig,
    pub stats: &'a EnsembleStats,
}

pub fn write_ensemble_json(dir: &Path, artifact: &EnsembleArtifact) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(artifact).expect("stats serialize");
    text.push('\n');
    write_file(dir, "stats.json", &text)
}

/// τ-refinement table → `sweep.csv`. Difference columns are empty on the
/// first level (nothing to compare against).
pub fn write_sweep_csv(dir: &Path, seed: u64, sweep: &TauSweep) -> Result<PathBuf> {
    let mut out = String::new();
    out.push_str(
        "# pathwise tau-refinement: each level halves tau and both substep sizes on the same \
         refined Brownian path\n",
    );
    let _ = writeln!(out, "# seed = {}", seed);
    out.push_str(
        "level,tau,rho_diff_from_prev,u_diff_from_prev,sqrho_u_sup,rho_gamma_sup,u_h1,\
         rho_beta_sup,grad_pressure\n",
    );
    for (level, (tau, m)) in sweep.taus.iter().zip(&sweep.moments).enumerate() {
        let (dr, du) = if level == 0 {
            (String::new(), String::new())
        } else {
            (num(sweep.rho_diff_l2[level - 1]), num(sweep.u_diff_l2[level - 1]))
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            level,
            num(*tau),
            dr,
            du,
            num(m.sqrho_u_sup),
            num(m.rho_gamma_sup),
            num(m.u_h1),
            num(m.rho_beta_sup),
            num(m.grad_pressure),
        );
    }
    write_file(dir, "sweep.csv", &out)
}

/// One invariant check: measured value against its acceptance threshold.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

/// Machine-readable result of `scns check`.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub n_paths: usize,
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
}

pub fn write_check_json(dir: &Path, report: &CheckReport) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(report).expect("check report serializes");
    text.push('\n');
    write_file(dir, "check.json", &text)
}

/// Echo the effective configuration next to the artifacts → `config.toml`.
pub fn write_config_echo(dir: &Path, config: &RunConfig) -> Result<PathBuf> {
    write_file(dir, "config.toml", &config.to_toml())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{run_path, RunOptions};
    use crate::testutil::{bump_data, mini_params};

    #[test]
    fn trajectory_csv_is_reproducible_and_self_describing() {
        let params = mini_params();
        let data = bump_data(&params, 0.2, 0.05);
        let traj = run_path(&params, &data, 0, &RunOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = write_trajectory_csv(dir.path(), &traj).unwrap();
        let first = fs::read(&p1).unwrap();
        let p2 = write_trajectory_csv(dir.path(), &traj).unwrap();
        let second = fs::read(&p2).unwrap();
        assert_eq!(first, second, "rewrites must be byte-identical");
        let text = String::from_utf8(first).unwrap();
        assert!(text.contains("# seed = 42"), "header must record the seed");
        assert!(text.lines().any(|l| l.starts_with("time,")), "column header missing");
        // samples: t = 0 plus every tau boundary
        let rows = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("time")).count();
        assert_eq!(rows, params.n_half_intervals() + 1);
    }

    #[test]
    fn states_csv_covers_all_samples_when_kept() {
        let params = mini_params();
        let data = bump_data(&params, 0.2, 0.05);
        let opts = RunOptions { stride: 1, keep_states: true, probe: None };
        let traj = run_path(&params, &data, 0, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_states_csv(dir.path(), &traj).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let data_rows =
            text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("time")).count();
        let grid = params.grid().unwrap();
        assert_eq!(data_rows, (params.n_half_intervals() + 1) * grid.len());
    }

    #[test]
    fn final_state_is_written_without_keep_states() {
        let params = mini_params();
        let data = bump_data(&params, 0.2, 0.05);
        let traj = run_path(&params, &data, 0, &RunOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_states_csv(dir.path(), &traj).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let grid = params.grid().unwrap();
        let data_rows =
            text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("time")).count();
        assert_eq!(data_rows, grid.len(), "exactly one block: the final state");
        assert!(text.contains(&format!("{},", params.t_final)), "rows carry the final time");
    }

    #[test]
    fn path_summary_rows_parse_back_as_floats() {
        let params = mini_params();
        let data = bump_data(&params, 0.2, 0.05);
        let traj = run_path(&params, &data, 3, &RunOptions::default()).unwrap();
        let row = path_summary_row(&path_summary(&traj));
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), PATHS_CSV_HEADER.split(',').count());
        assert_eq!(fields[0], "3");
        for f in &fields[1..] {
            f.parse::<f64>().unwrap_or_else(|_| panic!("unparseable field {f}"));
        }
    }
}
