//! Invariant checks and statistical tests over trajectories and ensembles.
//!
//! Everything here is a *consumer* of [`Trajectory`] data: the steppers
//! accumulate exact discrete tallies (energy ledger terms, applied drift,
//! noise integrands F_k and G_k, Brownian values), and this module turns them
//! into pass/fail numbers:
//!
//! - **mass**: max_t |Q(ρ_t) − Q(ρ_0)| — conservation to roundoff.
//! - **energy ledger**: residual(t) = E(t) + D(t) − W(t) − I(t) − E(0), where
//!   D is the accumulated dissipation, W the stochastic work and I the Itô
//!   compensator. Shrinks with (dt, h) pathwise; its W-free ensemble mean is
//!   centred at 0.
//! - **weak form**: ⟨ρ_t, φ⟩ − ⟨ρ_0, φ⟩ − ∫2h_det[⟨ρu, ∇φ⟩ + ε⟨ρ, Δφ⟩] ds
//!   for a scalar probe φ; φ ≡ 1 collapses to the mass check, identically.
//! - **martingale structure**: necessary-condition z-tests for the dual
//!   velocity increment M_t(φ) = ⟨φ, m*_t − m*_0 − drift_t⟩: (1) M is a
//!   martingale, (2) M² − ∫Σ_k F_k(φ)² is one, (3) M·β_k − ∫F_k(φ) is one.
//!   Each condition is tried against three bounded adapted multipliers Z_s
//!   (1, sign⟨ρ_s, φ⟩, clamp(M_s)); under the null every z is asymptotically
//!   standard normal.
//! - **effective viscous flux**: ensemble mean of
//!   ∫₀ᵀ∫_K ((2μ+λ)div u − p(ρ))·ρ over an interior box K.
//! - **moment summary**: Monte Carlo estimates of the uniform-bound
//!   quantities (sup-in-time energies, H¹ time integral, pressure-gradient
//!   integral) raised to requested powers.
//!
//! The tests are necessary conditions, not proofs: a bug can in principle
//! slip through, but the suite includes fault-injected controls (e.g. the
//! pressure term dropped from the compensator) that demonstrate the tests
//! have teeth.

use crate::basis::build_basis;
use crate::driver::{moment_estimate, path_moment_scalars, EnsembleStats, Trajectory};
use crate::error::{Error, Result};
use crate::model::DensityField;
use crate::operators::effective_viscous_pressure;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Mass and energy
// ---------------------------------------------------------------------------

/// Largest mass drift over the sampled times.
pub fn mass_residual(traj: &Trajectory) -> f64 {
    let m0 = traj.samples[0].mass;
    traj.samples.iter().map(|s| (s.mass - m0).abs()).fold(0.0, f64::max)
}

/// One row of the pathwise energy ledger.
#[derive(Debug, Clone, Serialize)]
pub struct LedgerRow {
    pub t: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub ito: f64,
    pub work: f64,
    /// E(t) + D(t) − W(t) − I(t) − E(0).
    pub residual: f64,
}

/// The energy identity evaluated at every sampled time.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max)
    }
}

pub fn energy_ledger(traj: &Trajectory) -> EnergyLedger {
    let e0 = traj.samples[0].energy;
    let rows = traj
        .samples
        .iter()
        .map(|s| LedgerRow {
            t: s.t,
            energy: s.energy,
            dissipation: s.dissipation,
            ito: s.ito_correction,
            work: s.work,
            residual: s.energy + s.dissipation - s.work - s.ito_correction - e0,
        })
        .collect();
    EnergyLedger { rows }
}

/// Largest |energy-ledger residual| over the sampled times.
pub fn energy_residual(traj: &Trajectory) -> f64 {
    energy_ledger(traj).max_residual()
}

/// Largest weak-form defect max_t |⟨ρ_t,φ⟩ − ⟨ρ_0,φ⟩ − rhs(t)| for the probe
/// the trajectory was run with. Errors if the run carried no probe.
pub fn weak_form_residual(traj: &Trajectory) -> Result<f64> {
    if !traj.has_probe {
        return Err(Error::Config(
            "weak-form residual needs a trajectory run with a scalar probe (RunOptions::probe)"
                .into(),
        ));
    }
    let p0 = traj.samples[0].wf_pairing;
    Ok(traj
        .samples
        .iter()
        .map(|s| (s.wf_pairing - p0 - s.wf_rhs).abs())
        .fold(0.0, f64::max))
}

// ---------------------------------------------------------------------------
// Martingale structure
// ---------------------------------------------------------------------------

/// z-tests of the three martingale necessary conditions for one test vector,
/// window (s, t) and Brownian mode.
///
/// `z_matrix[c][m]` is the z-score of condition `c` under multiplier `m`;
/// `z[c]` is the entry of largest magnitude in row `c`. Conditions:
/// 0 = increment mean, 1 = quadratic variation, 2 = cross variation with
/// β_mode. Multipliers: 0 = constant 1, 1 = sign⟨ρ_s, φ⟩, 2 = clamp(M_s).
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub label: String,
    pub s: f64,
    pub t: f64,
    pub mode: usize,
    pub n_paths: usize,
    pub z: [f64; 3],
    pub z_matrix: [[f64; 3]; 3],
    pub mean: [[f64; 3]; 3],
    pub se: [[f64; 3]; 3],
}

fn sample_index(traj: &Trajectory, time: f64) -> Result<usize> {
    let tol = 1e-9 * (1.0 + time.abs());
    traj.samples
        .iter()
        .position(|s| (s.t - time).abs() <= tol)
        .ok_or_else(|| {
            Error::Config(format!(
                "no sample at t = {time}; sampled times are multiples of {} (stride) on [0, {}]",
                traj.params.tau,
                traj.params.t_final
            ))
        })
}

fn mean_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn zscore(mean: f64, se: f64) -> f64 {
    if se == 0.0 {
        if mean == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(mean)
        }
    } else {
        mean / se
    }
}

fn martingale_core(
    trajs: &[Trajectory],
    phi: &[f64],
    label: &str,
    s: f64,
    t: f64,
    mode: usize,
    drop_pressure: bool,
) -> Result<MartingaleReport> {
    if trajs.len() < 100 {
        return Err(Error::Power(format!(
            "martingale z-tests need at least 100 paths for the normal approximation, got {}",
            trajs.len()
        )));
    }
    let params = &trajs[0].params;
    let n_scalar = params.n_modes.pow(params.d as u32);
    let dim = params.d * n_scalar;
    if phi.len() != dim {
        return Err(Error::Shape { expected: dim, got: phi.len() });
    }
    if mode >= params.noise.k_max {
        return Err(Error::Config(format!(
            "cross-variation mode {mode} out of range (k_max = {})",
            params.noise.k_max
        )));
    }
    if !(s < t) {
        return Err(Error::Config(format!("need s < t, got s = {s}, t = {t}")));
    }

    // Per-path functionals at one sample.
    let eval = |traj: &Trajectory, idx: usize| -> (f64, f64, f64, f64, f64) {
        let sm = &traj.samples[idx];
        let s0 = &traj.samples[0];
        let mut m = 0.0;
        for i in 0..dim {
            let mut drift = sm.drift_dual[i];
            if drop_pressure {
                drift -= sm.pressure_dual[i];
            }
            m += phi[i] * (sm.mstar[i] - s0.mstar[i] - drift);
        }
        let mut qv = 0.0;
        for g in &sm.gk {
            let mut acc = 0.0;
            for a in 0..dim {
                if phi[a] == 0.0 {
                    continue;
                }
                for b in 0..dim {
                    acc += phi[a] * g[a * dim + b] * phi[b];
                }
            }
            qv += acc;
        }
        let fk: f64 = (0..dim).map(|i| phi[i] * sm.fk_dual[mode][i]).sum();
        let rho_phi: f64 =
            (0..dim).map(|i| phi[i] * sm.rho_mode_dual[i % n_scalar]).sum();
        (m, qv, fk, sm.beta[mode], rho_phi)
    };

    let mut cond = [[Vec::new(), Vec::new(), Vec::new()], [Vec::new(), Vec::new(), Vec::new()], [
        Vec::new(),
        Vec::new(),
        Vec::new(),
    ]];
    for traj in trajs {
        let is = sample_index(traj, s)?;
        let it = sample_index(traj, t)?;
        let (ms, qvs, fks, bs, rho_phi_s) = eval(traj, is);
        let (mt, qvt, fkt, bt, _) = eval(traj, it);
        let c = [
            mt - ms,
            mt * mt - ms * ms - (qvt - qvs),
            mt * bt - ms * bs - (fkt - fks),
        ];
        let z_mult = [1.0, rho_phi_s.signum(), ms.clamp(-1.0, 1.0)];
        for (ci, &cv) in c.iter().enumerate() {
            for (mi, &zv) in z_mult.iter().enumerate() {
                cond[ci][mi].push(zv * cv);
            }
        }
    }

    let mut z_matrix = [[0.0_f64; 3]; 3];
    let mut mean = [[0.0_f64; 3]; 3];
    let mut se = [[0.0_f64; 3]; 3];
    let mut z = [0.0_f64; 3];
    for ci in 0..3 {
        for mi in 0..3 {
            let (m, e) = mean_se(&cond[ci][mi]);
            mean[ci][mi] = m;
            se[ci][mi] = e;
            z_matrix[ci][mi] = zscore(m, e);
            if z_matrix[ci][mi].abs() > z[ci].abs() {
                z[ci] = z_matrix[ci][mi];
            }
        }
    }
    Ok(MartingaleReport {
        label: label.to_string(),
        s,
        t,
        mode,
        n_paths: trajs.len(),
        z,
        z_matrix,
        mean,
        se,
    })
}

/// Coordinate test vector: the `index`-th velocity basis coefficient.
pub fn unit_test_vector(params: &crate::model::SimParams, index: usize) -> Result<Vec<f64>> {
    let dim = params.d * params.n_modes.pow(params.d as u32);
    if index >= dim {
        return Err(Error::Config(format!(
            "test vector index {index} out of range (velocity space dimension {dim})"
        )));
    }
    let mut phi = vec![0.0; dim];
    phi[index] = 1.0;
    Ok(phi)
}

/// Test the martingale necessary conditions on an ensemble.
pub fn martingale_test(
    trajs: &[Trajectory],
    phi: &[f64],
    label: &str,
    s: f64,
    t: f64,
    mode: usize,
) -> Result<MartingaleReport> {
    martingale_core(trajs, phi, label, s, t, mode, false)
}

/// Fault-injected control: re-run the same tests with the pressure part
/// removed from the compensator. A healthy suite must reject this loudly
/// (condition 0 far outside |z| ≤ 4) whenever pressure does real work.
pub fn martingale_control_dropped_pressure(
    trajs: &[Trajectory],
    phi: &[f64],
    label: &str,
    s: f64,
    t: f64,
    mode: usize,
) -> Result<MartingaleReport> {
    martingale_core(trajs, phi, label, s, t, mode, true)
}

// ---------------------------------------------------------------------------
// Effective viscous flux
// ---------------------------------------------------------------------------

/// Axis-aligned box K = Π[lo_c, hi_c], strictly inside the domain. Bounds
/// are snapped to the nearest grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Monte Carlo estimate of E[∫₀ᵀ∫_K ((2μ+λ)div u − p(ρ))·ρ dx ds].
#[derive(Debug, Clone, Serialize)]
pub struct FluxReport {
    pub mean: f64,
    pub se: f64,
    /// |K| after snapping to grid nodes.
    pub region_measure: f64,
    pub n_paths: usize,
}

/// Per-axis snapped node range and 1-D trapezoid weights inside the box.
fn region_axes(region: &Region, grid: crate::grid::Grid) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    if region.lo.len() != grid.d || region.hi.len() != grid.d {
        return Err(Error::Region(format!(
            "region has {} axes, grid is {}-dimensional",
            region.lo.len(),
            grid.d
        )));
    }
    let mut axes = Vec::with_capacity(grid.d);
    for c in 0..grid.d {
        let (lo, hi) = (region.lo[c], region.hi[c]);
        if !(lo < hi) {
            return Err(Error::Region(format!("axis {c}: need lo < hi, got [{lo}, {hi}]")));
        }
        let ia = (lo / grid.h).round() as i64;
        let ib = (hi / grid.h).round() as i64;
        // interior control: at least two cells between K and each wall, so
        // boundary effects cannot leak into the flux average
        if ia < 2 || ib > (grid.n as i64 - 3) || ib <= ia {
            return Err(Error::Region(format!(
                "axis {c}: snapped node range [{ia}, {ib}] must sit at least 2 cells inside \
                 [0, {}]",
                grid.n - 1
            )));
        }
        let (ia, ib) = (ia as usize, ib as usize);
        let mut w = vec![grid.h; ib - ia + 1];
        w[0] = 0.5 * grid.h;
        w[ib - ia] = 0.5 * grid.h;
        axes.push((ia, ib, w));
    }
    Ok(axes)
}

pub fn flux_diagnostic(trajs: &[Trajectory], region: &Region) -> Result<FluxReport> {
    if trajs.is_empty() {
        return Err(Error::Config("flux diagnostic needs at least one path".into()));
    }
    let params = &trajs[0].params;
    let grid = params.grid()?;
    let basis = build_basis(grid, params.n_modes, params.d)?;
    let axes = region_axes(region, grid)?;
    let region_measure: f64 =
        axes.iter().map(|(ia, ib, _)| (ib - ia) as f64 * grid.h).product();

    let mut vals = Vec::with_capacity(trajs.len());
    for traj in trajs {
        let times: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
        let nt = times.len();
        if nt < 2 {
            return Err(Error::Config("flux diagnostic needs at least two samples".into()));
        }
        let mut path_val = 0.0;
        for (i, sample) in traj.samples.iter().enumerate() {
            let rho_vals = sample.rho.as_ref().ok_or_else(|| {
                Error::Config(
                    "flux diagnostic needs stored density snapshots (RunOptions::keep_states)"
                        .into(),
                )
            })?;
            let rho = DensityField { grid, values: rho_vals.clone() };
            let evp = effective_viscous_pressure(&rho, &sample.u, params, &basis);
            // space: tensor trapezoid restricted to K
            let mut space = 0.0;
            match grid.d {
                1 => {
                    let (ia, ib, w) = &axes[0];
                    for ix in *ia..=*ib {
                        space -= w[ix - ia] * evp[ix] * rho.values[ix];
                    }
                }
                _ => {
                    let (ia0, ib0, w0) = &axes[0];
                    let (ia1, ib1, w1) = &axes[1];
                    for iy in *ia1..=*ib1 {
                        for ix in *ia0..=*ib0 {
                            let node = grid.encode(ix, iy);
                            space -= w0[ix - ia0] * w1[iy - ia1] * evp[node] * rho.values[node];
                        }
                    }
                }
            }
            // time: trapezoid over the sampled boundaries
            let tw = if i == 0 {
                0.5 * (times[1] - times[0])
            } else if i == nt - 1 {
                0.5 * (times[nt - 1] - times[nt - 2])
            } else {
                0.5 * (times[i + 1] - times[i - 1])
            };
            path_val += tw * space;
        }
        vals.push(path_val);
    }
    let (mean, se) = mean_se(&vals);
    Ok(FluxReport { mean, se, region_measure, n_paths: trajs.len() })
}

// ---------------------------------------------------------------------------
// Moment summary
// ---------------------------------------------------------------------------

/// Ensemble moment estimates for the uniform-bound quantities at each power
/// in `p_list` (see [`EnsembleStats`] for the five quantities).
pub fn moment_summary(trajs: &[Trajectory], p_list: &[u32]) -> EnsembleStats {
    assert!(trajs.len() >= 2, "moment summary needs at least two paths");
    assert!(!p_list.is_empty(), "empty power list");
    let per_path: Vec<[f64; 5]> = trajs.iter().map(path_moment_scalars).collect();
    let column = |i: usize| -> Vec<f64> { per_path.iter().map(|v| v[i]).collect() };
    let estimates =
        |i: usize| p_list.iter().map(|&p| moment_estimate(&column(i), p)).collect();
    EnsembleStats {
        n_paths: trajs.len(),
        sqrho_u_sup: estimates(0),
        rho_gamma_sup: estimates(1),
        u_h1: estimates(2),
        rho_beta_sup: estimates(3),
        grad_pressure: estimates(4),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{run_path, run_paths, RunOptions, ScalarProbe};
    use crate::model::{DensityField, InitialData};
    use crate::testutil::{base_params, bump_data, mini_params};

    fn stationary_setup() -> (crate::model::SimParams, InitialData) {
        let mut params = mini_params();
        params.noise.amp = 0.0;
        params.delta = 0.0;
        let grid = params.grid().unwrap();
        let data = InitialData::new(
            DensityField::constant(grid, 1.0),
            vec![0.0; params.d * grid.len()],
        )
        .unwrap();
        (params, data)
    }

    #[test]
    fn stationary_ledger_is_exact() {
        let (params, data) = stationary_setup();
        let traj = run_path(&params, &data, 0, &RunOptions::default()).unwrap();
        assert!(mass_residual(&traj) <= 1e-12, "mass residual {}", mass_residual(&traj));
        assert!(
            energy_residual(&traj) <= 1e-12,
            "stationary energy residual {}",
            energy_residual(&traj)
        );
    }

    #[test]
    fn energy_residual_shrinks_when_substeps_refine() {
        // Noise-free but far from equilibrium; fine grid keeps the
        // h-dependent floor of the residual below the dt-driven part.
        let mut params = base_params();
        params.noise.amp = 0.0;
        // coarse enough that the dt part of the residual dominates the O(h)
        // floor, fine enough to clear the advection CFL bound
        params.dt_det = params.tau / 32.0;
        params.dt_st = params.tau / 16.0;
        let data = bump_data(&params, 0.2, 0.08);
        let coarse = energy_residual(&run_path(&params, &data, 0, &RunOptions::default()).unwrap());
        params.dt_det /= 2.0;
        params.dt_st /= 2.0;
        let fine = energy_residual(&run_path(&params, &data, 0, &RunOptions::default()).unwrap());
        eprintln!("energy residual: dt -> {coarse:.3e}, dt/2 -> {fine:.3e}");
        assert!(
            fine <= 0.7 * coarse,
            "halving dt cut the residual only from {coarse:.3e} to {fine:.3e}"
        );
    }

    #[test]
    fn noisy_ledger_gain_is_centred_on_ito_term() {
        let mut params = mini_params();
        params.noise.amp = 0.05;
        let data = bump_data(&params, 0.2, 0.05);
        let trajs = run_paths(&params, &data, 64, &RunOptions::default()).unwrap();
        // E(T)+D(T)−E(0)−I(T) = W(T) + discretization bias; W is mean-zero
        let gains: Vec<f64> = trajs
            .iter()
            .map(|t| {
                let last = t.samples.last().unwrap();
                last.energy + last.dissipation - last.ito_correction - t.samples[0].energy
            })
            .collect();
        let (mean, se) = mean_se(&gains);
        assert!(
            mean.abs() <= 3.0 * se,
            "mean energy gain {mean:.3e} exceeds 3·SE = {:.3e}",
            3.0 * se
        );
    }

    #[test]
    fn constant_probe_weak_form_is_the_mass_check() {
        let params = mini_params();
        let grid = params.grid().unwrap();
        let data = bump_data(&params, 0.25, 0.05);
        let opts = RunOptions {
            stride: 1,
            keep_states: false,
            probe: Some(ScalarProbe::constant(grid)),
        };
        let traj = run_path(&params, &data, 0, &opts).unwrap();
        // identical arithmetic on both sides: equality is exact
        assert_eq!(weak_form_residual(&traj).unwrap(), mass_residual(&traj));
    }

    #[test]
    fn weak_form_requires_a_probe() {
        let params = mini_params();
        let data = bump_data(&params, 0.2, 0.05);
        let traj = run_path(&params, &data, 0, &RunOptions::default()).unwrap();
        let err = weak_form_residual(&traj).unwrap_err();
        assert!(err.to_string().contains("probe"), "unexpected error: {err}");
    }

    fn unit_phi(params: &crate::model::SimParams, index: usize) -> Vec<f64> {
        unit_test_vector(params, index).unwrap()
    }

    #[test]
    fn martingale_null_passes_and_dropped_pressure_fails() {
        let params = mini_params();
        let data = bump_data(&params, 0.2, 0.05);
        let trajs = run_paths(&params, &data, 128, &RunOptions::default()).unwrap();
        let phi = unit_phi(&params, 0);
        let report = martingale_test(&trajs, &phi, "e0", 0.5, 1.0, 0).unwrap();
        for (c, zc) in report.z.iter().enumerate() {
            assert!(
                zc.abs() <= 4.0,
                "condition {c} rejected on healthy data: z = {zc:.2} (matrix {:?})",
                report.z_matrix
            );
        }
        let control =
            martingale_control_dropped_pressure(&trajs, &phi, "e0", 0.5, 1.0, 0).unwrap();
        assert!(
            control.z[0].abs() >= 5.0,
            "control too weak: dropping the pressure from the compensator only moved the \
             increment z to {:.2}",
            control.z[0]
        );
    }

    #[test]
    fn martingale_needs_statistical_power() {
        let mut params = mini_params();
        params.noise.amp = 0.0;
        let data = bump_data(&params, 0.2, 0.05);
        let trajs = run_paths(&params, &data, 3, &RunOptions::default()).unwrap();
        let phi = unit_phi(&params, 0);
        let err = martingale_test(&trajs, &phi, "e0", 0.5, 1.0, 0).unwrap_err();
        assert!(err.to_string().contains("100"), "unexpected error: {err}");
    }

    #[test]
    fn flux_on_the_rest_state_is_minus_t_times_region() {
        let (params, data) = stationary_setup();
        let opts = RunOptions { stride: 1, keep_states: true, probe: None };
        let trajs = run_paths(&params, &data, 4, &opts).unwrap();
        let region = Region { lo: vec![0.25], hi: vec![0.75] };
        let report = flux_diagnostic(&trajs, &region).unwrap();
        // u = 0, ρ ≡ 1, δ = 0: integrand is exactly −1 on K, so the estimate
        // is −T·|K| with zero spread
        assert!((report.region_measure - 0.5).abs() < 1e-15);
        assert!(
            (report.mean - (-params.t_final * 0.5)).abs() < 1e-14,
            "flux mean {} vs {}",
            report.mean,
            -params.t_final * 0.5
        );
        assert_eq!(report.se, 0.0, "deterministic ensemble must have zero spread");
    }

    #[test]
    fn flux_region_must_stay_clear_of_walls() {
        let (params, data) = stationary_setup();
        let opts = RunOptions { stride: 1, keep_states: true, probe: None };
        let trajs = run_paths(&params, &data, 2, &opts).unwrap();
        let grid = params.grid().unwrap();
        let region = Region { lo: vec![grid.h], hi: vec![0.5] };
        let err = flux_diagnostic(&trajs, &region).unwrap_err();
        assert!(matches!(err, Error::Region(_)), "expected region error, got {err}");
        let report = flux_diagnostic(
            &trajs,
            &Region { lo: vec![2.0 * grid.h], hi: vec![0.5] },
        );
        assert!(report.is_ok(), "2-cell margin must be accepted: {report:?}");
    }

    #[test]
    fn flux_needs_stored_states() {
        let (params, data) = stationary_setup();
        let trajs = run_paths(&params, &data, 2, &RunOptions::default()).unwrap();
        let region = Region { lo: vec![0.25], hi: vec![0.75] };
        let err = flux_diagnostic(&trajs, &region).unwrap_err();
        assert!(err.to_string().contains("keep_states"), "unexpected error: {err}");
    }

    #[test]
    fn noisy_flux_report_is_finite_and_spread_out() {
        let params = mini_params();
        let data = bump_data(&params, 0.2, 0.05);
        let opts = RunOptions { stride: 1, keep_states: true, probe: None };
        let trajs = run_paths(&params, &data, 8, &opts).unwrap();
        let region = Region { lo: vec![0.25], hi: vec![0.75] };
        let report = flux_diagnostic(&trajs, &region).unwrap();
        assert!(report.mean.is_finite());
        assert!(report.se > 0.0, "noise must induce path-to-path spread");
    }
}
