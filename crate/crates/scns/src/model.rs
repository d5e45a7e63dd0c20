//! Model data: parameters, fields, the isentropic pressure law, the energy
//! functional, and initial-data regularization.
//!
//! The simulated system is the isentropic compressible Navier–Stokes equations
//! with multiplicative noise on the momentum equation, under the standing
//! assumptions used throughout this crate:
//!
//! - **Hyp 1.1** (pressure law): P(ρ) = ρ^γ with γ > 3/2 when d = 2. The
//!   scheme adds an artificial pressure δρ^β with β > max(d, 2γ, 4).
//! - **Hyp 1.2** (data compatibility): m₀ = 0 wherever ρ₀ = 0.
//! - **Hyp 1.3** (noise shape): each σ_k is bounded and uniformly Lipschitz in
//!   (ρ, m).
//! - **Hyp 1.4** (summability): Σ_k λ_k‖e_k‖²_∞ < ∞; with λ_k = amp·k^(−a)
//!   this needs a > 1.
//!
//! `validate_params` enforces these by name so configuration errors identify
//! the exact violated assumption.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::noise::NoiseConfig;

/// All scheme parameters. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// Spatial dimension, 1 or 2.
    pub d: usize,
    /// Nodes per dimension of the shared grid.
    pub grid_n: usize,
    /// Galerkin sine modes per dimension; velocity space dimension is d·n_modes^d.
    pub n_modes: usize,
    /// Splitting half-period τ; t_final/τ must be an even integer.
    pub tau: f64,
    /// Time horizon T.
    pub t_final: f64,
    /// Sub-step size inside deterministic half-intervals (τ/dt_det integer).
    pub dt_det: f64,
    /// Sub-step size inside stochastic half-intervals (τ/dt_st integer).
    pub dt_st: f64,
    /// Artificial viscosity ε ≥ 0 in the regularized continuity equation.
    pub eps: f64,
    /// Artificial-pressure weight δ ≥ 0; also sets the initial-data floor and
    /// the mollification radius of the noise coefficients.
    pub delta: f64,
    /// Shear viscosity μ > 0.
    pub mu: f64,
    /// Bulk viscosity λ > 0.
    pub lambda: f64,
    /// Adiabatic exponent γ.
    pub gamma: f64,
    /// Artificial-pressure exponent β > max(d, 2γ, 4).
    pub beta: f64,
    pub noise: NoiseConfig,
    /// Base RNG seed; every path/mode stream is derived from it.
    pub seed: u64,
}

impl SimParams {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.d, self.grid_n)
    }

    /// Number of half-intervals T/τ.
    pub fn n_half_intervals(&self) -> usize {
        (self.t_final / self.tau).round() as usize
    }

    /// Substeps per deterministic half-interval.
    pub fn n_det_substeps(&self) -> usize {
        (self.tau / self.dt_det).round() as usize
    }

    /// Substeps per stochastic half-interval.
    pub fn n_st_substeps(&self) -> usize {
        (self.tau / self.dt_st).round() as usize
    }
}

/// Nodal mass density on the shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<DensityField> {
        if values.len() != grid.len() {
            return Err(Error::Shape { expected: grid.len(), got: values.len() });
        }
        Ok(DensityField { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> DensityField {
        DensityField { values: vec![value; grid.len()], grid }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Total mass under trapezoid quadrature.
    pub fn mass(&self) -> f64 {
        self.grid.quadrature(&self.values)
    }
}

/// Coordinates of a velocity in the Galerkin space X_n (length d·n_modes^d).
pub type VelocityCoeffs = Vec<f64>;

/// Initial density and momentum. Momentum is nodal, component-major.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub rho0: DensityField,
    pub m0: Vec<f64>,
}

/// Full discrete state at a point in rescaled time.
///
/// `u` and `mstar` are kept together because the velocity is only ever
/// *defined* through the mass matrix: u = M\[ρ\]⁻¹ m*. Whenever ρ changes the
/// pair must be re-linked by a fresh solve; steppers maintain that invariant.
#[derive(Debug, Clone)]
pub struct SimState {
    /// Rescaled time s ∈ [0, T].
    pub t: f64,
    pub rho: DensityField,
    /// Galerkin coordinates of the velocity (length d·n_modes^d).
    pub u: VelocityCoeffs,
    /// Dual momentum m*_i = ⟨ρu, e_i⟩, same length as `u`.
    pub mstar: Vec<f64>,
}

impl InitialData {
    pub fn new(rho0: DensityField, m0: Vec<f64>) -> Result<InitialData> {
        let len = rho0.grid.len();
        if m0.len() != rho0.grid.d * len {
            return Err(Error::Shape { expected: rho0.grid.d * len, got: m0.len() });
        }
        for i in 0..len {
            if rho0.values[i] < 0.0 {
                return Err(Error::Domain(format!("negative initial density at node {i}")));
            }
            if rho0.values[i] == 0.0 {
                for c in 0..rho0.grid.d {
                    if m0[c * len + i] != 0.0 {
                        return Err(Error::Domain(format!(
                            "Hyp 1.2 violated: momentum must vanish on the vacuum set (node {i})"
                        )));
                    }
                }
            }
        }
        Ok(InitialData { rho0, m0 })
    }
}

/// Isentropic + artificial pressure P(ρ) = ρ^γ + δρ^β.
pub fn pressure(rho_value: f64, params: &SimParams) -> Result<f64> {
    if rho_value < 0.0 {
        return Err(Error::Domain(format!("pressure of negative density {rho_value}")));
    }
    Ok(pressure_unchecked(rho_value, params))
}

/// Pressure without the domain check, for hot loops where ρ ≥ 0 is invariant.
#[inline]
pub fn pressure_unchecked(rho: f64, params: &SimParams) -> f64 {
    let mut p = rho.powf(params.gamma);
    if params.delta > 0.0 {
        p += params.delta * rho.powf(params.beta);
    }
    p
}

/// Potential-energy density Π(ρ) = ρ^γ/(γ−1) + δρ^β/(β−1).
#[inline]
pub fn potential_density(rho: f64, params: &SimParams) -> f64 {
    let mut v = rho.powf(params.gamma) / (params.gamma - 1.0);
    if params.delta > 0.0 {
        v += params.delta * rho.powf(params.beta) / (params.beta - 1.0);
    }
    v
}

/// Potential energy ∫ Π(ρ) dx.
pub fn potential_energy(rho: &DensityField, params: &SimParams) -> f64 {
    let f: Vec<f64> = rho.values.iter().map(|&r| potential_density(r, params)).collect();
    rho.grid.quadrature(&f)
}

/// Total energy E = ∫ ½ρ|u|² + ρ^γ/(γ−1) + δρ^β/(β−1) dx with u given by
/// Galerkin coefficients.
pub fn total_energy(
    rho: &DensityField,
    u: &VelocityCoeffs,
    basis: &crate::basis::GalerkinBasis,
    params: &SimParams,
) -> f64 {
    let len = rho.grid.len();
    let un = basis.evaluate(u);
    let mut integrand = vec![0.0; len];
    for i in 0..len {
        let mut usq = 0.0;
        for c in 0..rho.grid.d {
            usq += un[c * len + i] * un[c * len + i];
        }
        integrand[i] = 0.5 * rho.values[i] * usq + potential_density(rho.values[i], params);
    }
    rho.grid.quadrature(&integrand)
}

/// Binomial [1,4,6,4,1]/16 smoothing pass along one dimension with mirrored
/// ghosts (even reflection about the boundary node), applied per dimension.
fn binomial_smooth(grid: &Grid, f: &[f64]) -> Vec<f64> {
    const W: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let n = grid.n as isize;
    let mirror = |j: isize| -> usize {
        let m = if j < 0 { -j } else if j >= n { 2 * (n - 1) - j } else { j };
        m as usize
    };
    let mut cur = f.to_vec();
    for dim in 0..grid.d {
        let mut next = vec![0.0; cur.len()];
        for i in 0..grid.len() {
            let [ix, iy] = grid.decode(i);
            let mut acc = 0.0;
            for (o, w) in (-2..=2).zip(W) {
                let idx = if dim == 0 {
                    grid.encode(mirror(ix as isize + o), iy)
                } else {
                    grid.encode(ix, mirror(iy as isize + o))
                };
                acc += w * cur[idx];
            }
            next[i] = acc;
        }
        cur = next;
    }
    cur
}

/// Regularized initial data: ρ_{0,δ} = clip(mollify(ρ₀), δ, δ^(−1/(2β))) and
/// m_{0,δ} = m₀ where ρ_{0,δ} ≥ ρ₀, else 0. The smoothing is a fixed-radius
/// (2 cells) discrete Gaussian with mirrored ghosts, so the discrete Neumann
/// condition holds at the boundary.
pub fn regularize_initial_data(data: &InitialData, delta: f64, beta: f64) -> Result<InitialData> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!(
            "regularization needs 0 < delta < 1, got {delta}"
        )));
    }
    let grid = data.rho0.grid;
    let len = grid.len();
    let ceiling = delta.powf(-1.0 / (2.0 * beta));
    let smoothed = binomial_smooth(&grid, &data.rho0.values);
    let mut rho = vec![0.0; len];
    for i in 0..len {
        rho[i] = smoothed[i].clamp(delta, ceiling);
    }
    let mut m = data.m0.clone();
    for i in 0..len {
        if rho[i] < data.rho0.values[i] {
            for c in 0..grid.d {
                m[c * len + i] = 0.0;
            }
        }
    }
    Ok(InitialData { rho0: DensityField { grid, values: rho }, m0: m })
}

/// Validation output: warnings plus the noise summability bound
/// Σ_{k≤K} λ_k‖e_k‖²_∞ and the analytic tail bound for k > K.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub warnings: Vec<String>,
    pub noise_sum_bound: f64,
    pub noise_tail_bound: f64,
}

fn near_integer(x: f64) -> Option<i64> {
    let r = x.round();
    if (x - r).abs() < 1e-9 * x.abs().max(1.0) {
        Some(r as i64)
    } else {
        None
    }
}

/// Check every standing assumption and structural constraint. Violations are
/// collected (not short-circuited) and each names the constraint it breaks.
pub fn validate_params(params: &SimParams) -> Result<ValidationReport> {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();

    if !(params.d == 1 || params.d == 2) {
        violations.push(format!("spatial dimension must be 1 or 2, got {}", params.d));
    }
    if params.grid_n < 3 {
        violations.push(format!("grid_n must be at least 3, got {}", params.grid_n));
    }
    if params.n_modes < 1 {
        violations.push("n_modes must be at least 1".into());
    }
    if 2 * params.n_modes >= params.grid_n {
        violations.push(format!(
            "resolvability violated: need 2·n_modes < grid_n, got n_modes = {}, grid_n = {}",
            params.n_modes, params.grid_n
        ));
    }
    if !(params.mu > 0.0) {
        violations.push(format!("viscosity mu must be > 0, got {}", params.mu));
    }
    if !(params.lambda > 0.0) {
        violations.push(format!("viscosity lambda must be > 0, got {}", params.lambda));
    }
    if params.eps < 0.0 {
        violations.push(format!("eps must be >= 0, got {}", params.eps));
    }
    if params.delta < 0.0 {
        violations.push(format!("delta must be >= 0, got {}", params.delta));
    }
    if !(params.tau > 0.0) {
        violations.push(format!("tau must be > 0, got {}", params.tau));
    }
    if !(params.t_final > 0.0) {
        violations.push(format!("t_final must be > 0, got {}", params.t_final));
    }

    // Hyp 1.1: adiabatic exponent.
    if params.d == 2 {
        if !(params.gamma > 1.5) {
            violations.push(format!(
                "Hyp 1.1 violated: need gamma > 3/2 when d = 2, got gamma = {}",
                params.gamma
            ));
        }
    } else if !(params.gamma > 1.0) {
        violations.push(format!("need gamma > 1, got gamma = {}", params.gamma));
    } else {
        warnings.push(
            "d = 1 sits outside the stated scope of Hyp 1.1 (d >= 2); proceeding".into(),
        );
    }

    // Artificial-pressure exponent.
    let beta_floor = (params.d as f64).max(2.0 * params.gamma).max(4.0);
    if !(params.beta > beta_floor) {
        violations.push(format!(
            "β constraint violated: need beta > max(d, 2·gamma, 4) = {}, got beta = {}",
            beta_floor, params.beta
        ));
    }

    // Hyp 1.4: noise summability (λ_k = amp·k^(−a) with bounded modes needs a > 1).
    if params.noise.amp < 0.0 {
        violations.push(format!("noise amp must be >= 0, got {}", params.noise.amp));
    }
    if params.noise.k_max > 0 && params.noise.amp > 0.0 && !(params.noise.decay_a > 1.0) {
        violations.push(format!(
            "Hyp 1.4 violated: summability needs decay_a > 1, got decay_a = {}",
            params.noise.decay_a
        ));
    }

    // Splitting-schedule structure.
    match near_integer(params.t_final / params.tau) {
        Some(r) if r > 0 && r % 2 == 0 => {}
        _ => violations.push(format!(
            "t_final/tau must be a positive even integer, got {}",
            params.t_final / params.tau
        )),
    }
    if !(params.dt_det > 0.0) || near_integer(params.tau / params.dt_det).filter(|&r| r > 0).is_none() {
        violations.push(format!(
            "tau/dt_det must be a positive integer, got {}",
            params.tau / params.dt_det
        ));
    }
    if !(params.dt_st > 0.0) || near_integer(params.tau / params.dt_st).filter(|&r| r > 0).is_none() {
        violations.push(format!(
            "tau/dt_st must be a positive integer, got {}",
            params.tau / params.dt_st
        ));
    }

    if !violations.is_empty() {
        return Err(Error::InvalidParams { violations });
    }

    // Summability report: ‖e_k‖²_∞ = 2^d for the tensor sine modes.
    let sup_sq = (2.0f64).powi(params.d as i32);
    let k_max = params.noise.k_max;
    let a = params.noise.decay_a;
    let noise_sum_bound: f64 = (1..=k_max)
        .map(|k| params.noise.amp * (k as f64).powf(-a) * sup_sq)
        .sum();
    let noise_tail_bound = if k_max == 0 || params.noise.amp == 0.0 {
        0.0
    } else {
        // Σ_{k>K} amp·k^(−a)·2^d ≤ amp·2^d·K^(1−a)/(a−1)
        params.noise.amp * sup_sq * (k_max as f64).powf(1.0 - a) / (a - 1.0)
    };

    Ok(ValidationReport { warnings, noise_sum_bound, noise_tail_bound })
}
