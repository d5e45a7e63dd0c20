//! Orchestration: the alternating half-interval schedule, single-path runs,
//! Monte Carlo ensembles, and τ-refinement sweeps.
//!
//! Time [0, T] splits into T/τ half-intervals (T/τ even). On half-interval k
//! the active dynamics are deterministic when k is even — h_det = 1 on
//! (t_{2j}, t_{2j+1}] — and stochastic when k is odd. Each kind of dynamics
//! runs at double weight inside its halves (×2 drift, √2 noise), so the two
//! subsystems each see an effective full horizon as τ → 0.
//!
//! A [`Trajectory`] samples the state at τ-boundaries (configurable stride)
//! together with every running accumulator the diagnostics need: the energy
//! ledger (dissipation, Itô correction, stochastic work), the moment-bound
//! probes, the exact applied drift in dual coordinates, the noise integrands
//! F_k, G_k, and the driving Brownian values themselves.
//!
//! Reproducibility contract: a path is fully determined by (params, data,
//! path index). Ensembles evaluate paths in parallel but reduce in index
//! order, so results are identical across worker counts, byte for byte.

use rayon::prelude::*;

use crate::basis::{build_basis, GalerkinBasis};
use crate::det::deterministic_halfstep;
use crate::error::{Error, Result};
use crate::model::{
    potential_energy, regularize_initial_data, validate_params, InitialData, SimParams, SimState,
};
use crate::noise::{build_noise_modes, stochastic_halfstep, BrownianPaths};
use crate::operators::{assemble_mass, solve_velocity};

/// Deterministic-phase indicator of the splitting schedule: 1 on
/// (t_{2j}, t_{2j+1}], 0 on (t_{2j+1}, t_{2j+2}] and at s = 0. Times within
/// 10⁻⁹τ of a boundary are snapped onto it.
pub fn h_det(s: f64, tau: f64) -> f64 {
    assert!(tau > 0.0, "tau must be positive");
    if s <= 0.0 {
        return 0.0;
    }
    let x = s / tau;
    let r = x.round();
    let m = if (x - r).abs() < 1e-9 { r as i64 } else { x.ceil() as i64 } - 1;
    if m.rem_euclid(2) == 0 {
        1.0
    } else {
        0.0
    }
}

/// Scalar test function sampled on the grid with analytic derivatives,
/// driving the weak-form continuity accumulator.
#[derive(Debug, Clone)]
pub struct ScalarProbe {
    /// φ at nodes.
    pub values: Vec<f64>,
    /// ∇φ at nodes, component-major (d·len).
    pub grad: Vec<f64>,
    /// Δφ at nodes.
    pub laplacian: Vec<f64>,
}

impl ScalarProbe {
    pub fn new(values: Vec<f64>, grad: Vec<f64>, laplacian: Vec<f64>) -> ScalarProbe {
        ScalarProbe { values, grad, laplacian }
    }

    /// The constant test function φ ≡ 1 (reduces the weak form to mass).
    pub fn constant(grid: crate::grid::Grid) -> ScalarProbe {
        let len = grid.len();
        ScalarProbe {
            values: vec![1.0; len],
            grad: vec![0.0; grid.d * len],
            laplacian: vec![0.0; len],
        }
    }
}

/// Sampling and instrumentation options for a single-path run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Sample every `stride`-th τ-boundary (0 and T always included);
    /// 0 means 1.
    pub stride: usize,
    /// Retain the full density field per sample (needed by the flux
    /// diagnostic and the τ sweep).
    pub keep_states: bool,
    /// Optional weak-form probe; see [`ScalarProbe`].
    pub probe: Option<ScalarProbe>,
}

/// State snapshot plus all running accumulators at one output time.
///
/// Scalars named `*_integral`-like (dissipation, ito_correction, work,
/// div_exponent, h1_time, grad_pressure, wf_rhs) accumulate from t = 0;
/// instantaneous quantities (mass, energies, norms) describe this time only.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub mass: f64,
    pub kinetic: f64,
    pub potential: f64,
    /// kinetic + potential.
    pub energy: f64,
    /// ∫ Φ ds (deterministic halves).
    pub dissipation: f64,
    /// Σ (s_k·Ms_k)·dt (stochastic halves).
    pub ito_correction: f64,
    /// Σ √2 (u·Ms_k) Δβ_k (stochastic halves).
    pub work: f64,
    /// ∫ 2 h_det ‖div u‖_∞ ds — the positivity-floor exponent.
    pub div_exponent: f64,
    /// ∫ 2 h_det ‖u‖²_{H¹} ds.
    pub h1_time: f64,
    /// ∫ 2 h_det ε [Q(|∇ρ^{γ/2}|²) + δ Q(|∇ρ^{β/2}|²)] ds.
    pub grad_pressure: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Q(ρ|u|²) = ‖√ρ u‖²_{L²}.
    pub sqrho_u_l2: f64,
    /// Q(ρ^γ) = ‖ρ‖_γ^γ.
    pub rho_lgamma: f64,
    /// Q(ρ^β).
    pub rho_lbeta: f64,
    /// Q(ρ·φ) for the probe (0 when absent).
    pub wf_pairing: f64,
    /// Accumulated ∫ 2 h_det [Q(ρu·∇φ) + ε Q(ρΔφ)] ds.
    pub wf_rhs: f64,
    pub u: Vec<f64>,
    pub mstar: Vec<f64>,
    /// Running exact applied drift, dual coordinates.
    pub drift_dual: Vec<f64>,
    /// Running pressure part of the drift.
    pub pressure_dual: Vec<f64>,
    /// Running Σ √2 (Ms_k) dt per mode.
    pub fk_dual: Vec<Vec<f64>>,
    /// Running Σ 2 (Ms_k)(Ms_k)ᵀ dt per mode, row-major dim×dim.
    pub gk: Vec<Vec<f64>>,
    /// Running realized quadratic variation Σ(Δβ_k)² per mode.
    pub qv: Vec<f64>,
    /// Brownian values β_k(t).
    pub beta: Vec<f64>,
    /// Q(ρ · scalar mode m) for every scalar basis mode.
    pub rho_mode_dual: Vec<f64>,
    /// Density snapshot when `keep_states` is set.
    pub rho: Option<Vec<f64>>,
}

/// One full path: samples at τ-boundaries plus the exact final state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: SimParams,
    pub path_index: u64,
    /// Whether the run carried a scalar probe (wf_* columns meaningful).
    pub has_probe: bool,
    pub samples: Vec<Sample>,
    pub final_state: SimState,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

/// Running accumulators carried across half-intervals.
struct Accum {
    dissipation: f64,
    ito: f64,
    work: f64,
    div_exponent: f64,
    h1_time: f64,
    grad_pressure: f64,
    wf_rhs: f64,
    drift_dual: Vec<f64>,
    pressure_dual: Vec<f64>,
    fk_dual: Vec<Vec<f64>>,
    gk: Vec<Vec<f64>>,
    qv: Vec<f64>,
}

impl Accum {
    fn new(dim: usize, k_max: usize) -> Accum {
        Accum {
            dissipation: 0.0,
            ito: 0.0,
            work: 0.0,
            div_exponent: 0.0,
            h1_time: 0.0,
            grad_pressure: 0.0,
            wf_rhs: 0.0,
            drift_dual: vec![0.0; dim],
            pressure_dual: vec![0.0; dim],
            fk_dual: vec![vec![0.0; dim]; k_max],
            gk: vec![vec![0.0; dim * dim]; k_max],
            qv: vec![0.0; k_max],
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Weak-form right-hand-side increment of one deterministic substep:
/// 2dt·[Q(ρ u·∇φ) + ε Q(ρ Δφ)] at the substep start.
fn wf_increment(
    state: &SimState,
    dt: f64,
    probe: &ScalarProbe,
    params: &SimParams,
    basis: &GalerkinBasis,
) -> f64 {
    let grid = basis.grid;
    let len = grid.len();
    let u_nodal = basis.evaluate(&state.u);
    let mut integrand = vec![0.0; len];
    for i in 0..len {
        let mut conv = 0.0;
        for c in 0..grid.d {
            conv += u_nodal[c * len + i] * probe.grad[c * len + i];
        }
        integrand[i] = state.rho.values[i] * (conv + params.eps * probe.laplacian[i]);
    }
    2.0 * dt * grid.quadrature(&integrand)
}

fn make_sample(
    state: &SimState,
    params: &SimParams,
    basis: &GalerkinBasis,
    paths: &BrownianPaths,
    acc: &Accum,
    opts: &RunOptions,
) -> Result<Sample> {
    let grid = basis.grid;
    let len = grid.len();
    let kinetic = 0.5 * state.mstar.iter().zip(&state.u).map(|(m, v)| m * v).sum::<f64>();
    let potential = potential_energy(&state.rho, params);
    let lgamma: Vec<f64> = state.rho.values.iter().map(|&r| r.powf(params.gamma)).collect();
    let lbeta: Vec<f64> = state.rho.values.iter().map(|&r| r.powf(params.beta)).collect();
    let mut beta = Vec::with_capacity(params.noise.k_max);
    for k in 0..params.noise.k_max {
        beta.push(paths.beta(k, state.t)?);
    }
    let mut rho_mode_dual = Vec::with_capacity(basis.n_scalar);
    let w = basis.quad_weights();
    for m in 0..basis.n_scalar {
        let vals = basis.scalar_vals(m);
        let mut acc_m = 0.0;
        for i in 0..len {
            acc_m += w[i] * state.rho.values[i] * vals[i];
        }
        rho_mode_dual.push(acc_m);
    }
    let wf_pairing = match &opts.probe {
        Some(p) => {
            let f: Vec<f64> =
                state.rho.values.iter().zip(&p.values).map(|(r, v)| r * v).collect();
            grid.quadrature(&f)
        }
        None => 0.0,
    };
    Ok(Sample {
        t: state.t,
        mass: state.rho.mass(),
        kinetic,
        potential,
        energy: kinetic + potential,
        dissipation: acc.dissipation,
        ito_correction: acc.ito,
        work: acc.work,
        div_exponent: acc.div_exponent,
        h1_time: acc.h1_time,
        grad_pressure: acc.grad_pressure,
        rho_min: state.rho.min(),
        rho_max: state.rho.max(),
        sqrho_u_l2: 2.0 * kinetic,
        rho_lgamma: grid.quadrature(&lgamma),
        rho_lbeta: grid.quadrature(&lbeta),
        wf_pairing,
        wf_rhs: acc.wf_rhs,
        u: state.u.clone(),
        mstar: state.mstar.clone(),
        drift_dual: acc.drift_dual.clone(),
        pressure_dual: acc.pressure_dual.clone(),
        fk_dual: acc.fk_dual.clone(),
        gk: acc.gk.clone(),
        qv: acc.qv.clone(),
        beta,
        rho_mode_dual,
        rho: if opts.keep_states { Some(state.rho.values.clone()) } else { None },
    })
}

/// Number of base Brownian cells covering [0, T] at spacing dt_st.
pub fn base_cells(params: &SimParams) -> usize {
    params.n_half_intervals() * params.n_st_substeps()
}

/// Sample the driving Brownian paths for one path index of a configuration.
pub fn sample_paths(params: &SimParams, path_index: u64) -> BrownianPaths {
    BrownianPaths::sample(
        params.seed,
        path_index,
        params.noise.k_max,
        params.t_final,
        base_cells(params),
    )
}

/// Run one path against externally supplied Brownian paths (the τ sweep
/// reuses one refined family across levels).
pub fn run_path_core(
    params: &SimParams,
    data: &InitialData,
    path_index: u64,
    paths: &BrownianPaths,
    opts: &RunOptions,
) -> Result<Trajectory> {
    validate_params(params)?;
    let grid = params.grid()?;
    if data.rho0.grid != grid {
        return Err(Error::Config(format!(
            "initial data lives on a {}-node grid, config wants {}",
            data.rho0.grid.n, grid.n
        )));
    }
    let basis = build_basis(grid, params.n_modes, params.d)?;
    let modes = build_noise_modes(grid, &params.noise)?;
    let prepared;
    let data = if params.delta > 0.0 {
        prepared = regularize_initial_data(data, params.delta, params.beta)?;
        &prepared
    } else {
        data
    };
    let mstar0 = basis.project(&data.m0)?;
    let mass0 = assemble_mass(&data.rho0, &basis);
    let u0 = solve_velocity(&mass0, &mstar0)?;
    let mut state = SimState { t: 0.0, rho: data.rho0.clone(), u: u0, mstar: mstar0 };

    let stride = opts.stride.max(1);
    let n_half = params.n_half_intervals();
    let mut acc = Accum::new(basis.dim, params.noise.k_max);
    let mut samples = Vec::with_capacity(n_half / stride + 2);
    samples.push(make_sample(&state, params, &basis, paths, &acc, opts)?);

    for k in 0..n_half {
        if k % 2 == 0 {
            let tally = match &opts.probe {
                Some(probe) => {
                    let wf = &mut acc.wf_rhs;
                    let mut cb = |s: &SimState, dt: f64| {
                        *wf += wf_increment(s, dt, probe, params, &basis);
                    };
                    deterministic_halfstep(&mut state, params, &basis, k, Some(&mut cb))?
                }
                None => deterministic_halfstep(&mut state, params, &basis, k, None)?,
            };
            acc.dissipation += tally.dissipation;
            acc.div_exponent += tally.div_sup_integral;
            acc.h1_time += tally.h1_integral;
            acc.grad_pressure += tally.grad_pressure_integral;
            add_into(&mut acc.drift_dual, &tally.drift_dual);
            add_into(&mut acc.pressure_dual, &tally.pressure_dual);
        } else {
            let tally = stochastic_halfstep(&mut state, params, &basis, &modes, paths, k)?;
            acc.work += tally.work;
            acc.ito += tally.ito;
            for (dst, src) in acc.fk_dual.iter_mut().zip(&tally.fk_dual) {
                add_into(dst, src);
            }
            for (dst, src) in acc.gk.iter_mut().zip(&tally.gk) {
                add_into(dst, src);
            }
            add_into(&mut acc.qv, &tally.qv);
        }
        // snap to the exact boundary (substep accumulation only rounds)
        state.t = (k + 1) as f64 * params.tau;
        let b = k + 1;
        if b % stride == 0 || b == n_half {
            samples.push(make_sample(&state, params, &basis, paths, &acc, opts)?);
        }
    }
    Ok(Trajectory {
        params: params.clone(),
        path_index,
        has_probe: opts.probe.is_some(),
        samples,
        final_state: state,
    })
}

/// Run one path with freshly sampled Brownian paths for `path_index`.
pub fn run_path(
    params: &SimParams,
    data: &InitialData,
    path_index: u64,
    opts: &RunOptions,
) -> Result<Trajectory> {
    let paths = sample_paths(params, path_index);
    run_path_core(params, data, path_index, &paths, opts)
}

/// Run `n_paths` independent paths (parallel, reduced in path order).
pub fn run_paths(
    params: &SimParams,
    data: &InitialData,
    n_paths: usize,
    opts: &RunOptions,
) -> Result<Vec<Trajectory>> {
    let results: Vec<Result<Trajectory>> = (0..n_paths)
        .into_par_iter()
        .map(|p| run_path(params, data, p as u64, opts))
        .collect();
    let mut out = Vec::with_capacity(n_paths);
    let mut failures = Vec::new();
    for (p, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => out.push(t),
            Err(e) => failures.push(format!("path {p} (seed {}, index {p}): {e}", params.seed)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Config(format!(
            "{} of {n_paths} paths failed:\n  {}",
            failures.len(),
            failures.join("\n  ")
        )));
    }
    Ok(out)
}

/// One moment estimate: sample mean of X^p over paths with its standard
/// error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MomentEstimate {
    pub p: u32,
    pub mean: f64,
    pub se: f64,
}

/// Ensemble moment estimates of the uniform-bound quantities: discrete
/// surrogates of sup-in-time and time-integral norms, raised to the powers in
/// `p_list`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EnsembleStats {
    pub n_paths: usize,
    /// E[(sup_t ‖√ρu‖²_{L²})^p].
    pub sqrho_u_sup: Vec<MomentEstimate>,
    /// E[(sup_t ‖ρ‖_γ^γ)^p].
    pub rho_gamma_sup: Vec<MomentEstimate>,
    /// E[(∫2h_det‖u‖²_{H¹} ds)^p].
    pub u_h1: Vec<MomentEstimate>,
    /// E[(δ·sup_t ‖ρ‖_β^β)^p] (δ^{β·(1/β)} = δ weighting).
    pub rho_beta_sup: Vec<MomentEstimate>,
    /// E[(∫2h_det ε[...] ds)^p] — the ∇ρ^{γ/2}/∇ρ^{β/2} integral.
    pub grad_pressure: Vec<MomentEstimate>,
}

/// The five per-path scalars feeding [`EnsembleStats`], in field order.
pub(crate) fn path_moment_scalars(traj: &Trajectory) -> [f64; 5] {
    let sup = |f: &dyn Fn(&Sample) -> f64| -> f64 {
        traj.samples.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
    };
    let last = traj.samples.last().expect("trajectory has samples");
    [
        sup(&|s| s.sqrho_u_l2),
        sup(&|s| s.rho_lgamma),
        last.h1_time,
        traj.params.delta * sup(&|s| s.rho_lbeta),
        last.grad_pressure,
    ]
}

pub(crate) fn moment_estimate(values: &[f64], p: u32) -> MomentEstimate {
    let n = values.len();
    assert!(n >= 2, "moment estimates need at least two paths");
    let powered: Vec<f64> = values.iter().map(|&v| v.powi(p as i32)).collect();
    let mean = powered.iter().sum::<f64>() / n as f64;
    let var = powered.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    MomentEstimate { p, mean, se: (var / n as f64).sqrt() }
}

/// Run an ensemble and summarize the uniform-bound moments (p = 1, 2).
pub fn run_ensemble(
    params: &SimParams,
    data: &InitialData,
    n_paths: usize,
) -> Result<EnsembleStats> {
    if n_paths < 2 {
        return Err(Error::Config(format!(
            "ensembles need at least 2 paths, got {n_paths}"
        )));
    }
    let trajs = run_paths(params, data, n_paths, &RunOptions::default())?;
    Ok(crate::diagnostics::moment_summary(&trajs, &[1, 2]))
}

/// Per-level moment values of a τ sweep (single path, p = 1).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepMoments {
    pub sqrho_u_sup: f64,
    pub rho_gamma_sup: f64,
    pub u_h1: f64,
    pub rho_beta_sup: f64,
    pub grad_pressure: f64,
}

/// Pathwise τ-refinement table: levels run τ, τ/2, …, on one Brownian family
/// refined in place, with substep counts per half-interval held fixed.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TauSweep {
    pub taus: Vec<f64>,
    /// L²_{t,x} density difference between consecutive levels, evaluated at
    /// the coarsest level's boundaries (trapezoid in time).
    pub rho_diff_l2: Vec<f64>,
    /// Same for velocity coefficients (spectral L²_x).
    pub u_diff_l2: Vec<f64>,
    pub moments: Vec<SweepMoments>,
}

/// Run `levels` nested τ-refinements of one path: level ℓ uses τ/2^ℓ with
/// dt_det, dt_st scaled down alongside (fixed substeps per half-interval),
/// consuming the same Brownian family through bridge refinement.
pub fn refine_tau_sweep(
    params: &SimParams,
    data: &InitialData,
    levels: usize,
    path_index: u64,
) -> Result<TauSweep> {
    if levels < 2 {
        return Err(Error::Config(format!("sweep needs at least 2 levels, got {levels}")));
    }
    validate_params(params)?;
    let mut paths = sample_paths(params, path_index);
    let n0 = params.n_half_intervals();

    let mut trajs: Vec<Trajectory> = Vec::with_capacity(levels);
    let mut taus = Vec::with_capacity(levels);
    for level in 0..levels {
        if level > 0 {
            paths.refine();
        }
        let scale = f64::from(1u32 << level);
        let mut p = params.clone();
        p.tau = params.tau / scale;
        p.dt_det = params.dt_det / scale;
        p.dt_st = params.dt_st / scale;
        let opts = RunOptions {
            stride: 1usize << level, // sample at the coarsest boundaries
            keep_states: true,
            probe: None,
        };
        taus.push(p.tau);
        trajs.push(run_path_core(&p, data, path_index, &paths, &opts)?);
    }

    let mut rho_diff_l2 = Vec::with_capacity(levels - 1);
    let mut u_diff_l2 = Vec::with_capacity(levels - 1);
    let grid = params.grid()?;
    for w in trajs.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        assert_eq!(a.samples.len(), b.samples.len(), "stride must align sweep samples");
        let (mut dr, mut du) = (0.0, 0.0);
        let nt = a.samples.len();
        for (i, (sa, sb)) in a.samples.iter().zip(&b.samples).enumerate() {
            assert!(
                (sa.t - sb.t).abs() < 1e-9 * params.t_final,
                "sweep samples misaligned: {} vs {}",
                sa.t,
                sb.t
            );
            let wt = if i == 0 || i == nt - 1 {
                0.5 * params.t_final / n0 as f64
            } else {
                params.t_final / n0 as f64
            };
            let ra = sa.rho.as_ref().expect("sweep keeps states");
            let rb = sb.rho.as_ref().expect("sweep keeps states");
            let sq: Vec<f64> =
                ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).collect();
            dr += wt * grid.quadrature(&sq);
            du += wt * sa.u.iter().zip(&sb.u).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        rho_diff_l2.push(dr.sqrt());
        u_diff_l2.push(du.sqrt());
    }

    let moments = trajs
        .iter()
        .map(|t| {
            let [a, b, c, d, e] = path_moment_scalars(t);
            SweepMoments {
                sqrho_u_sup: a,
                rho_gamma_sup: b,
                u_h1: c,
                rho_beta_sup: d,
                grad_pressure: e,
            }
        })
        .collect();
    Ok(TauSweep { taus, rho_diff_l2, u_diff_l2, moments })
}
