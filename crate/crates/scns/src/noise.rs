//! Stochastic forcing: spectral noise families, the regularized coefficient
//! fields, and Brownian path management with bridge refinement.
//!
//! The driving noise is a truncated series Σ_k σ_k dβ_k with independent
//! scalar Brownian motions β_k. Mode j (zero-based) carries spectral weight
//! λ_j = amp·(j+1)^{−decay_a}, acts on velocity component c = j mod d, and
//! uses the tensor sine shape picked by a square-shell enumeration of
//! {1,2,…}^d, so growing `k_max` exhausts every component/shape pair. The
//! state coupling g is one of three bounded, 1-Lipschitz choices: the
//! constant 1, ρ/(1+ρ), or m_c/(1+|m|); in every case |σ_j| ≤ λ_j^{1/2}·√2^d
//! pointwise and Σ_j λ_j < ∞ whenever decay_a > 1.
//!
//! The coefficients actually used by the time stepper are regularized: the
//! density is capped at 1/τ in the momentum slot, both state fields are
//! smoothed by a compact discrete mollifier of radius ~δ (zero extension
//! outside the domain), and the resulting vector field is L²-projected onto
//! the Galerkin space.
//!
//! Brownian paths are stored as a pyramid of increments: the base level holds
//! iid N(0, Δt) cell increments and each refinement adds a finer level via
//! Brownian-bridge midpoint sampling. Coarse levels stay authoritative —
//! queries over coarse-aligned windows are answered from the stored coarse
//! values, so refining a path never perturbs a previously observable
//! increment, bit for bit. Children reproduce their parent's sum to rounding
//! (two floating-point operations), which is as exact as IEEE addition
//! allows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{sine_mode_value, GalerkinBasis};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{DensityField, SimParams, SimState, VelocityCoeffs};
use crate::operators::assemble_mass;

/// State dependence of the noise coefficients. All three choices are bounded
/// by 1 and 1-Lipschitz in the state, uniformly over modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// g ≡ 1 (additive noise).
    Constant,
    /// g = ρ/(1+ρ), evaluated on the (mollified) density.
    SaturatingDensity,
    /// g = m_c/(1+|m|), evaluated on the (mollified, truncated) momentum.
    SaturatingMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Number of retained modes K (0 = deterministic run).
    pub k_max: usize,
    /// Spectral decay exponent: λ_j = amp·(j+1)^{−decay_a}.
    pub decay_a: f64,
    /// Amplitude; 0 = deterministic run.
    pub amp: f64,
    pub coupling: Coupling,
}

impl Default for NoiseConfig {
    /// Eight modes with summable quadratic decay at small amplitude.
    fn default() -> NoiseConfig {
        NoiseConfig { k_max: 8, decay_a: 2.0, amp: 0.02, coupling: Coupling::Constant }
    }
}

/// Spectral weight of zero-based mode j.
pub fn lambda(cfg: &NoiseConfig, mode: usize) -> f64 {
    cfg.amp * ((mode + 1) as f64).powf(-cfg.decay_a)
}

/// Component and tensor sine index of zero-based mode j.
///
/// Components rotate fastest (j mod d); shapes follow a square-shell sweep of
/// {1,2,…}^d — shell r lists (1,r)…(r,r) then (r,r−1)…(r,1) — so every
/// shape/component pair appears exactly once as j grows.
pub fn noise_mode_layout(mode: usize, d: usize) -> (usize, [usize; 2]) {
    let comp = mode % d;
    let s = mode / d;
    if d == 1 {
        return (comp, [s + 1, 1]);
    }
    // locate shell r: shells have sizes 2r−1, cumulative r²
    let mut r = 1usize;
    while r * r <= s {
        r += 1;
    }
    let off = s - (r - 1) * (r - 1); // 0 ≤ off < 2r−1
    let pair = if off < r { [off + 1, r] } else { [r, 2 * r - 1 - off] };
    (comp, pair)
}

/// Precomputed nodal tables for the retained noise modes on a fixed grid.
#[derive(Debug, Clone)]
pub struct NoiseModes {
    pub cfg: NoiseConfig,
    pub d: usize,
    /// λ_j^{1/2} per mode.
    pub sqrt_lambda: Vec<f64>,
    /// Velocity component acted on, per mode.
    pub components: Vec<usize>,
    /// Tensor sine index per mode.
    pub tensor: Vec<[usize; 2]>,
    /// Nodal values of the scalar sine shape, per mode.
    vals: Vec<Vec<f64>>,
}

pub fn build_noise_modes(grid: Grid, cfg: &NoiseConfig) -> Result<NoiseModes> {
    let d = grid.d;
    let len = grid.len();
    let mut sqrt_lambda = Vec::with_capacity(cfg.k_max);
    let mut components = Vec::with_capacity(cfg.k_max);
    let mut tensor = Vec::with_capacity(cfg.k_max);
    let mut vals = Vec::with_capacity(cfg.k_max);
    for j in 0..cfg.k_max {
        let (c, k) = noise_mode_layout(j, d);
        if k[0] >= grid.n - 1 || (d == 2 && k[1] >= grid.n - 1) {
            return Err(Error::Config(format!(
                "noise mode {j} has sine frequency {:?}, unresolvable on a {}-node grid",
                k, grid.n
            )));
        }
        let mut v = vec![0.0; len];
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = sine_mode_value(d, k, grid.coord(i));
        }
        sqrt_lambda.push(lambda(cfg, j).sqrt());
        components.push(c);
        tensor.push(k);
        vals.push(v);
    }
    Ok(NoiseModes { cfg: *cfg, d, sqrt_lambda, components, tensor, vals })
}

impl NoiseModes {
    #[inline]
    pub fn shape_vals(&self, mode: usize) -> &[f64] {
        &self.vals[mode]
    }
}

/// Pointwise coefficient σ_j(ρ, m, x): component c(j) carries
/// λ_j^{1/2}·(sine shape)(x)·g(ρ, m). The momentum argument is the raw state
/// the caller wishes to couple to (pass the mollified/truncated fields to
/// reproduce the regularized coefficients).
pub fn sigma_k(
    d: usize,
    mode: usize,
    rho_val: f64,
    m_val: [f64; 2],
    x: [f64; 2],
    cfg: &NoiseConfig,
) -> [f64; 2] {
    debug_assert!(rho_val >= 0.0, "sigma_k needs a nonnegative density");
    let (c, k) = noise_mode_layout(mode, d);
    let shape = sine_mode_value(d, k, x);
    let g = match cfg.coupling {
        Coupling::Constant => 1.0,
        Coupling::SaturatingDensity => rho_val / (1.0 + rho_val),
        Coupling::SaturatingMomentum => {
            let norm = if d == 1 {
                m_val[0].abs()
            } else {
                (m_val[0] * m_val[0] + m_val[1] * m_val[1]).sqrt()
            };
            m_val[c] / (1.0 + norm)
        }
    };
    let mut out = [0.0, 0.0];
    out[c] = lambda(cfg, mode).sqrt() * shape * g;
    out
}

/// Discrete mollification by a normalized hat kernel of node radius
/// max(1, ⌈δ/h⌉), applied per dimension, with zero extension outside the
/// domain. Radius 1 (δ < h) is the identity; boundary nodes lose the mass
/// their stencil would draw from outside.
pub fn mollify(field: &[f64], grid: Grid, delta: f64) -> Vec<f64> {
    debug_assert!(delta > 0.0, "mollification radius must be positive");
    let r = ((delta / grid.h).ceil() as usize).max(1);
    if r == 1 {
        return field.to_vec();
    }
    let weights: Vec<f64> = (0..2 * r - 1)
        .map(|i| (r - (i as isize - (r - 1) as isize).unsigned_abs()) as f64 / (r * r) as f64)
        .collect();
    let n = grid.n;
    let mut cur = field.to_vec();
    let mut next = vec![0.0; cur.len()];
    for axis in 0..grid.d {
        for (i, slot) in next.iter_mut().enumerate() {
            let [ix, iy] = grid.decode(i);
            let along = if axis == 0 { ix } else { iy };
            let mut acc = 0.0;
            for (w_idx, w) in weights.iter().enumerate() {
                let off = w_idx as isize - (r - 1) as isize;
                let j = along as isize + off;
                if j < 0 || j >= n as isize {
                    continue; // zero extension
                }
                let src = if axis == 0 {
                    grid.encode(j as usize, iy)
                } else {
                    grid.encode(ix, j as usize)
                };
                acc += w * cur[src];
            }
            *slot = acc;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Regularized noise coefficients frozen at a given density.
///
/// Built once per stochastic half-interval: the density (frozen there) is
/// mollified once and the truncation cap min(ρ, 1/τ) precomputed; only the
/// momentum slot needs refreshing as the velocity moves.
pub struct RegularizedNoise<'a> {
    pub modes: &'a NoiseModes,
    pub basis: &'a GalerkinBasis,
    delta: f64,
    /// Mollified density (raw when δ = 0).
    rho_moll: Vec<f64>,
    /// min(ρ, 1/τ) at nodes — the density cap applied in the momentum slot.
    trunc: Vec<f64>,
}

impl<'a> RegularizedNoise<'a> {
    pub fn new(
        rho: &DensityField,
        params: &SimParams,
        basis: &'a GalerkinBasis,
        modes: &'a NoiseModes,
    ) -> Result<Self> {
        let grid = basis.grid;
        if rho.values.len() != grid.len() {
            return Err(Error::Shape { expected: grid.len(), got: rho.values.len() });
        }
        let rho_moll = if params.delta > 0.0 {
            mollify(&rho.values, grid, params.delta)
        } else {
            rho.values.clone()
        };
        let cap = 1.0 / params.tau;
        let trunc = rho.values.iter().map(|&v| v.min(cap)).collect();
        Ok(RegularizedNoise { modes, basis, delta: params.delta, rho_moll, trunc })
    }

    /// Whether the coefficients depend on the velocity (if not, they are
    /// constant across a stochastic half-interval, where ρ is frozen).
    pub fn velocity_dependent(&self) -> bool {
        self.modes.cfg.coupling == Coupling::SaturatingMomentum
    }

    /// Nodal coupling momentum: the mollified, density-capped field fed to g.
    fn coupling_momentum(&self, u: &VelocityCoeffs) -> Vec<f64> {
        let grid = self.basis.grid;
        let len = grid.len();
        let mut mom = self.basis.evaluate(u);
        for c in 0..grid.d {
            for i in 0..len {
                mom[c * len + i] *= self.trunc[i];
            }
        }
        if self.delta > 0.0 {
            let mut out = Vec::with_capacity(mom.len());
            for c in 0..grid.d {
                out.extend(mollify(&mom[c * len..(c + 1) * len], grid, self.delta));
            }
            out
        } else {
            mom
        }
    }

    /// Projected coefficient vectors s_j for every retained mode at the given
    /// velocity.
    pub fn coeffs(&self, u: &VelocityCoeffs) -> Result<Vec<VelocityCoeffs>> {
        let cfg = &self.modes.cfg;
        if cfg.amp == 0.0 {
            return Ok(vec![vec![0.0; self.basis.dim]; cfg.k_max]);
        }
        let grid = self.basis.grid;
        let len = grid.len();
        let mom = match cfg.coupling {
            Coupling::SaturatingMomentum => Some(self.coupling_momentum(u)),
            _ => None,
        };
        let mut out = Vec::with_capacity(cfg.k_max);
        let mut field = vec![0.0; grid.d * len];
        for j in 0..cfg.k_max {
            field.iter_mut().for_each(|v| *v = 0.0);
            let c = self.modes.components[j];
            let sl = self.modes.sqrt_lambda[j];
            let shape = self.modes.shape_vals(j);
            let slot = &mut field[c * len..(c + 1) * len];
            match cfg.coupling {
                Coupling::Constant => {
                    for i in 0..len {
                        slot[i] = sl * shape[i];
                    }
                }
                Coupling::SaturatingDensity => {
                    for i in 0..len {
                        let r = self.rho_moll[i];
                        slot[i] = sl * shape[i] * (r / (1.0 + r));
                    }
                }
                Coupling::SaturatingMomentum => {
                    let mom = mom.as_ref().unwrap();
                    for i in 0..len {
                        let norm = if grid.d == 1 {
                            mom[i].abs()
                        } else {
                            (mom[i] * mom[i] + mom[len + i] * mom[len + i]).sqrt()
                        };
                        slot[i] = sl * shape[i] * mom[c * len + i] / (1.0 + norm);
                    }
                }
            }
            out.push(self.basis.project(&field)?);
        }
        Ok(out)
    }
}

/// Single-mode regularized coefficient (see [`RegularizedNoise`] for the
/// batched form used by the stepper).
pub fn sigma_reg(
    rho: &DensityField,
    u: &VelocityCoeffs,
    mode: usize,
    params: &SimParams,
    basis: &GalerkinBasis,
    modes: &NoiseModes,
) -> Result<VelocityCoeffs> {
    let reg = RegularizedNoise::new(rho, params, basis, modes)?;
    let mut all = reg.coeffs(u)?;
    if mode >= all.len() {
        return Err(Error::Config(format!(
            "noise mode index {mode} out of range (k_max = {})",
            all.len()
        )));
    }
    Ok(all.swap_remove(mode))
}

// ---------------------------------------------------------------------------
// Brownian paths
// ---------------------------------------------------------------------------

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent, scheduling-order-free RNG stream for one (path, mode, level).
fn stream(base_seed: u64, path: u64, mode: u64, level: u64) -> ChaCha8Rng {
    let s0 = mix64(base_seed ^ 0x243F_6A88_85A3_08D3);
    let s1 = mix64(s0 ^ path.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let s2 = mix64(s1 ^ mode.wrapping_mul(0xD1B5_4A32_D192_ED03));
    let s3 = mix64(s2 ^ level.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7));
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&mix64(s3 ^ (i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// One realization of the K driving Brownian motions on [0, T], stored as a
/// pyramid of cell increments.
///
/// Level 0 splits [0, T] into `base_cells` cells with iid N(0, Δt)
/// increments; each refinement level halves the cells via Brownian-bridge
/// midpoint sampling. All levels are retained: a query over a window aligned
/// to some level is answered from that level's stored values (greedy maximal
/// dyadic blocks, summed left to right), so a given query returns
/// bit-identical results before and after any number of refinements.
#[derive(Debug, Clone)]
pub struct BrownianPaths {
    pub k_max: usize,
    pub t_final: f64,
    pub base_cells: usize,
    base_seed: u64,
    path_index: u64,
    /// tree[mode][level][cell]; level ℓ has base_cells·2^ℓ cells.
    tree: Vec<Vec<Vec<f64>>>,
    levels: u32,
}

impl BrownianPaths {
    /// Sample the base level. Fully determined by (base_seed, path_index):
    /// worker scheduling cannot influence the draw.
    pub fn sample(
        base_seed: u64,
        path_index: u64,
        k_max: usize,
        t_final: f64,
        base_cells: usize,
    ) -> BrownianPaths {
        assert!(base_cells >= 1, "need at least one base cell");
        assert!(t_final > 0.0, "horizon must be positive");
        let w0 = t_final / base_cells as f64;
        let sd = w0.sqrt();
        let mut tree = Vec::with_capacity(k_max);
        for mode in 0..k_max {
            let mut rng = stream(base_seed, path_index, mode as u64, 0);
            let cells: Vec<f64> = (0..base_cells)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                })
                .collect();
            tree.push(vec![cells]);
        }
        BrownianPaths { k_max, t_final, base_cells, base_seed, path_index, tree, levels: 0 }
    }

    /// Add one refinement level: every cell splits at its midpoint with the
    /// bridge draw ξ ~ N(0, w/4). Existing levels are untouched.
    pub fn refine(&mut self) {
        let level = self.levels + 1;
        let parent_w = self.t_final / (self.base_cells as f64) / f64::from(1u32 << self.levels);
        let sd = (parent_w / 4.0).sqrt();
        for mode in 0..self.k_max {
            let mut rng = stream(self.base_seed, self.path_index, mode as u64, u64::from(level));
            let parents = &self.tree[mode][self.levels as usize];
            let mut children = Vec::with_capacity(parents.len() * 2);
            for &p in parents {
                let z: f64 = StandardNormal.sample(&mut rng);
                let xi = sd * z;
                let c1 = 0.5 * p + xi;
                children.push(c1);
                children.push(p - c1);
            }
            self.tree[mode].push(children);
        }
        self.levels = level;
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn finest_cells(&self) -> usize {
        self.base_cells << self.levels
    }

    pub fn finest_dt(&self) -> f64 {
        self.t_final / self.finest_cells() as f64
    }

    /// Increment over a range of finest-level cells [a, b), assembled from the
    /// stored pyramid by greedy maximal dyadic blocks.
    pub fn increment_cells(&self, mode: usize, a: usize, b: usize) -> f64 {
        assert!(mode < self.k_max, "mode {mode} out of range (k_max = {})", self.k_max);
        assert!(a <= b && b <= self.finest_cells(), "cell range [{a}, {b}) out of bounds");
        let lmax = self.levels;
        let mut acc = 0.0;
        let mut pos = a;
        while pos < b {
            let mut e = if pos == 0 { lmax } else { lmax.min(pos.trailing_zeros()) };
            while (1usize << e) > b - pos {
                e -= 1;
            }
            acc += self.tree[mode][(lmax - e) as usize][pos >> e];
            pos += 1usize << e;
        }
        acc
    }

    fn cell_of(&self, t: f64, t0: f64, t1: f64) -> Result<usize> {
        let dt = self.finest_dt();
        let idx = (t / dt).round();
        if (t - idx * dt).abs() > 1e-9 * dt.max(t.abs()) || idx < 0.0 {
            return Err(Error::Misaligned { t0, t1, cell: dt });
        }
        let idx = idx as usize;
        if idx > self.finest_cells() {
            return Err(Error::Misaligned { t0, t1, cell: dt });
        }
        Ok(idx)
    }

    /// β_mode(t1) − β_mode(t0); both endpoints must sit on the finest cell
    /// grid. Coarse-aligned windows read the stored coarse increments, so the
    /// answer is unaffected by refinement.
    pub fn increment(&self, mode: usize, t0: f64, t1: f64) -> Result<f64> {
        let a = self.cell_of(t0, t0, t1)?;
        let b = self.cell_of(t1, t0, t1)?;
        if a > b {
            return Err(Error::Misaligned { t0, t1, cell: self.finest_dt() });
        }
        Ok(self.increment_cells(mode, a, b))
    }

    /// β_mode(t) with β_mode(0) = 0.
    pub fn beta(&self, mode: usize, t: f64) -> Result<f64> {
        self.increment(mode, 0.0, t)
    }
}

// ---------------------------------------------------------------------------
// Stochastic half-interval
// ---------------------------------------------------------------------------

/// Accumulated per-half-interval stochastic quantities.
///
/// With s_k the regularized coefficient vectors at a substep start and M the
/// (frozen) mass matrix, one Euler–Maruyama substep changes the kinetic
/// energy by exactly
///
/// ```text
///   ΔK = √2 Σ_k (u·Ms_k) Δβ_k  +  Σ_{k,m} (s_k·Ms_m) Δβ_k Δβ_m,
/// ```
///
/// whose compensator is Σ_k (s_k·Ms_k)·dt. The tally records the first sum
/// (`work`), the compensator (`ito`), and the mode-wise integrands the
/// martingale diagnostics contract against test functions later.
#[derive(Debug, Clone)]
pub struct StochTally {
    /// Σ √2 (u·Ms_k) Δβ_k — energy injected by the noise, as applied.
    pub work: f64,
    /// Σ_k (s_k·Ms_k)·dt — the Itô correction matching `work`'s expectation.
    pub ito: f64,
    /// Per mode: Σ √2·(Ms_k)·dt (dual vectors, length dim).
    pub fk_dual: Vec<Vec<f64>>,
    /// Per mode: Σ 2·(Ms_k)(Ms_k)ᵀ·dt, row-major dim×dim.
    pub gk: Vec<Vec<f64>>,
    /// Per mode realized quadratic variation Σ (Δβ_k)².
    pub qv: Vec<f64>,
}

impl StochTally {
    fn zero(k_max: usize, dim: usize) -> StochTally {
        StochTally {
            work: 0.0,
            ito: 0.0,
            fk_dual: vec![vec![0.0; dim]; k_max],
            gk: vec![vec![0.0; dim * dim]; k_max],
            qv: vec![0.0; k_max],
        }
    }
}

/// Advance `state` through one full stochastic half-interval (τ/dt_st
/// Euler–Maruyama substeps) using the Brownian increments of `paths` over
/// [state.t, state.t + τ].
///
/// The density is frozen bit-identically; the velocity receives
/// √2·Σ_k s_k Δβ_k per substep with coefficients evaluated at the substep
/// start (re-evaluated only for velocity-dependent coupling). The dual
/// momentum is re-linked as m* = M·u once at the end.
pub fn stochastic_halfstep(
    state: &mut SimState,
    params: &SimParams,
    basis: &GalerkinBasis,
    modes: &NoiseModes,
    paths: &BrownianPaths,
    interval: usize,
) -> Result<StochTally> {
    let n_sub = params.n_st_substeps();
    assert!(n_sub > 0, "half-interval needs at least one substep");
    let dt = params.tau / n_sub as f64;
    let k_max = params.noise.k_max;
    let dim = basis.dim;
    let mut tally = StochTally::zero(k_max, dim);
    let step_err = |substep: usize, source: Error| Error::Step {
        interval,
        kind: "stochastic",
        substep,
        source: Box::new(source),
    };

    let mass = assemble_mass(&state.rho, basis);
    let reg = RegularizedNoise::new(&state.rho, params, basis, modes)
        .map_err(|e| step_err(0, e))?;

    let t0 = state.t;
    let mut s: Vec<VelocityCoeffs> = Vec::new();
    let mut ms: Vec<Vec<f64>> = Vec::new();
    let mut db = vec![0.0; k_max];
    for sub in 0..n_sub {
        if sub == 0 || reg.velocity_dependent() {
            s = reg.coeffs(&state.u).map_err(|e| step_err(sub, e))?;
            ms = s.iter().map(|sk| mass.apply(sk)).collect();
        }
        let ta = t0 + sub as f64 * dt;
        let tb = t0 + (sub + 1) as f64 * dt;
        for (k, slot) in db.iter_mut().enumerate() {
            *slot = paths.increment(k, ta, tb).map_err(|e| step_err(sub, e))?;
        }

        for k in 0..k_max {
            let umsk: f64 = state.u.iter().zip(&ms[k]).map(|(a, b)| a * b).sum();
            tally.work += std::f64::consts::SQRT_2 * umsk * db[k];
            let smsk: f64 = s[k].iter().zip(&ms[k]).map(|(a, b)| a * b).sum();
            tally.ito += smsk * dt;
            tally.qv[k] += db[k] * db[k];
            for (dst, m) in tally.fk_dual[k].iter_mut().zip(&ms[k]) {
                *dst += std::f64::consts::SQRT_2 * m * dt;
            }
            let g = &mut tally.gk[k];
            for a in 0..dim {
                let row = 2.0 * dt * ms[k][a];
                for b in 0..dim {
                    g[a * dim + b] += row * ms[k][b];
                }
            }
        }

        for k in 0..k_max {
            let scale = std::f64::consts::SQRT_2 * db[k];
            for (u, sk) in state.u.iter_mut().zip(&s[k]) {
                *u += scale * sk;
            }
        }
        state.t = tb;
    }
    state.mstar = mass.apply(&state.u);
    Ok(tally)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;
    use crate::testutil::base_params;

    fn cfg(coupling: Coupling) -> NoiseConfig {
        NoiseConfig { k_max: 8, decay_a: 2.0, amp: 0.02, coupling }
    }

    #[test]
    fn lambda_closed_form() {
        let c = cfg(Coupling::Constant);
        assert!((lambda(&c, 0) - 0.02).abs() < 1e-15);
        assert!((lambda(&c, 3) - 0.02 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn mode_layout_covers_shells() {
        // d=2: components alternate; shapes sweep (1,1) | (1,2),(2,2),(2,1) | …
        let expect = [
            (0, [1, 1]),
            (1, [1, 1]),
            (0, [1, 2]),
            (1, [1, 2]),
            (0, [2, 2]),
            (1, [2, 2]),
            (0, [2, 1]),
            (1, [2, 1]),
            (0, [1, 3]),
        ];
        for (j, &(c, k)) in expect.iter().enumerate() {
            assert_eq!(noise_mode_layout(j, 2), (c, k), "mode {j}");
        }
        assert_eq!(noise_mode_layout(4, 1), (0, [5, 1]));
    }

    #[test]
    fn sigma_constant_closed_form() {
        // mode 0, d=1, x=0.5: λ₀^{1/2}·√2·sin(π/2)
        let c = cfg(Coupling::Constant);
        let v = sigma_k(1, 0, 1.0, [0.0, 0.0], [0.5, 0.0], &c);
        assert!((v[0] - (0.02f64).sqrt() * 2.0f64.sqrt()).abs() < 1e-14);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn sigma_momentum_vanishes_at_zero() {
        let c = cfg(Coupling::SaturatingMomentum);
        let v = sigma_k(2, 1, 1.0, [0.0, 0.0], [0.3, 0.7], &c);
        assert_eq!(v, [0.0, 0.0]);
    }

    #[test]
    fn sigma_bounded_by_sup() {
        let c = cfg(Coupling::SaturatingDensity);
        for i in 0..50 {
            let x = [i as f64 / 49.0, (i as f64 * 0.37) % 1.0];
            let rho = i as f64 * 0.5;
            let v = sigma_k(2, 2, rho, [1.0, -2.0], x, &c);
            let bound = lambda(&c, 2).sqrt() * 2.0;
            assert!(v[0].hypot(v[1]) <= bound + 1e-14);
        }
    }

    #[test]
    fn mollify_small_delta_is_identity() {
        let grid = Grid::new(1, 65).unwrap();
        let f: Vec<f64> = (0..65).map(|i| (i as f64).sin()).collect();
        let out = mollify(&f, grid, 0.5 * grid.h);
        assert_eq!(out, f);
    }

    #[test]
    fn mollify_constant_interior() {
        let grid = Grid::new(2, 33).unwrap();
        let f = vec![2.5; grid.len()];
        let out = mollify(&f, grid, 3.0 * grid.h);
        let center = grid.encode(16, 16);
        assert!((out[center] - 2.5).abs() < 1e-12);
        // boundary nodes lose mass to the zero extension
        assert!(out[grid.encode(0, 16)] < 2.5);
    }

    #[test]
    fn mollify_spreads_dirac_mass() {
        let grid = Grid::new(1, 129).unwrap();
        let mut f = vec![0.0; grid.len()];
        f[64] = 1.0;
        let out = mollify(&f, grid, 4.0 * grid.h);
        let total: f64 = out.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "interior spread conserves the unit mass");
        assert!(out.iter().all(|&v| v >= 0.0));
        let mut g = vec![0.0; grid.len()];
        g[1] = 1.0; // next to the boundary: stencil leaks outside
        let leaked: f64 = mollify(&g, grid, 4.0 * grid.h).iter().sum();
        assert!(leaked < 1.0 - 1e-3);
    }

    #[test]
    fn sigma_reg_zero_amplitude() {
        let params = base_params();
        let grid = params.grid().unwrap();
        let basis = build_basis(grid, params.n_modes, params.d).unwrap();
        let mut p = params.clone();
        p.noise.amp = 0.0;
        let modes = build_noise_modes(grid, &p.noise).unwrap();
        let rho = DensityField::constant(grid, 1.0);
        let u = vec![0.1; basis.dim];
        let s = sigma_reg(&rho, &u, 3, &p, &basis, &modes).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigma_reg_constant_coupling_hits_basis_axes() {
        // d=1: noise mode j and basis field j share the same sine shape, and
        // the discrete orthogonality makes the projection a unit coefficient
        let params = base_params();
        let grid = params.grid().unwrap();
        let basis = build_basis(grid, params.n_modes, params.d).unwrap();
        let modes = build_noise_modes(grid, &params.noise).unwrap();
        let rho = DensityField::constant(grid, 1.0);
        let u = vec![0.0; basis.dim];
        for j in 0..params.noise.k_max {
            let s = sigma_reg(&rho, &u, j, &params, &basis, &modes).unwrap();
            let sl = lambda(&params.noise, j).sqrt();
            for (i, &si) in s.iter().enumerate() {
                let expect = if i == j { sl } else { 0.0 };
                assert!((si - expect).abs() < 1e-12, "mode {j}, coeff {i}: {si}");
            }
        }
    }

    #[test]
    fn sigma_reg_modes_beyond_span_project_to_zero() {
        let mut params = base_params();
        params.n_modes = 4;
        params.noise.k_max = 6;
        let grid = params.grid().unwrap();
        let basis = build_basis(grid, params.n_modes, params.d).unwrap();
        let modes = build_noise_modes(grid, &params.noise).unwrap();
        let rho = DensityField::constant(grid, 1.0);
        let reg = RegularizedNoise::new(&rho, &params, &basis, &modes).unwrap();
        let all = reg.coeffs(&vec![0.0; basis.dim]).unwrap();
        for j in 4..6 {
            for &v in &all[j] {
                assert!(v.abs() < 1e-12, "mode {j} should fall outside the span");
            }
        }
    }

    #[test]
    fn sigma_reg_truncation_caps_density() {
        // ρ ≫ 1/τ: the momentum slot sees the cap, so a run with ρ ≡ 50 and a
        // run with ρ ≡ 1/τ give identical momentum-coupled coefficients
        let mut params = base_params();
        params.noise.coupling = Coupling::SaturatingMomentum;
        let grid = params.grid().unwrap();
        let basis = build_basis(grid, params.n_modes, params.d).unwrap();
        let modes = build_noise_modes(grid, &params.noise).unwrap();
        let u: VelocityCoeffs = (0..basis.dim).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let big = RegularizedNoise::new(&DensityField::constant(grid, 50.0), &params, &basis, &modes)
            .unwrap()
            .coeffs(&u)
            .unwrap();
        let capped = RegularizedNoise::new(
            &DensityField::constant(grid, 1.0 / params.tau),
            &params,
            &basis,
            &modes,
        )
        .unwrap()
        .coeffs(&u)
        .unwrap();
        for (a, b) in big.iter().zip(&capped) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn sigma_reg_matches_pointwise_sigma() {
        // δ = 0 disables mollification, so projecting the pointwise field by
        // quadrature must reproduce sigma_reg exactly
        let mut params = base_params();
        params.delta = 0.0;
        params.noise.coupling = Coupling::SaturatingDensity;
        let grid = params.grid().unwrap();
        let basis = build_basis(grid, params.n_modes, params.d).unwrap();
        let modes = build_noise_modes(grid, &params.noise).unwrap();
        let rho = DensityField::new(
            grid,
            (0..grid.len())
                .map(|i| 1.0 + 0.3 * (std::f64::consts::PI * grid.coord(i)[0]).cos())
                .collect(),
        )
        .unwrap();
        let u = vec![0.0; basis.dim];
        let j = 2;
        let s = sigma_reg(&rho, &u, j, &params, &basis, &modes).unwrap();
        let mut field = vec![0.0; grid.len()];
        for (i, slot) in field.iter_mut().enumerate() {
            let v = sigma_k(1, j, rho.values[i], [0.0, 0.0], grid.coord(i), &params.noise);
            *slot = v[0];
        }
        let direct = basis.project(&field).unwrap();
        for (a, b) in s.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    // --- Brownian pyramid ---

    #[test]
    fn empty_increment_is_zero() {
        let p = BrownianPaths::sample(7, 0, 2, 1.0, 8);
        assert_eq!(p.increment(0, 0.25, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn children_reproduce_parent_sum() {
        let mut p = BrownianPaths::sample(11, 3, 3, 2.0, 16);
        let w = 2.0f64 / 16.0;
        let coarse: Vec<f64> = (0..16).map(|i| p.increment_cells(1, i, i + 1)).collect();
        p.refine();
        for (i, &c) in coarse.iter().enumerate() {
            let kids = p.tree[1][1][2 * i] + p.tree[1][1][2 * i + 1];
            // residual is one rounding of the bridge arithmetic, whose scale
            // is the bridge draw (~√w), not the parent increment
            assert!(
                (kids - c).abs() <= 8.0 * f64::EPSILON * w.sqrt(),
                "cell {i}: {kids} vs {c}"
            );
        }
    }

    #[test]
    fn refinement_preserves_coarse_queries_bitwise() {
        let mut p = BrownianPaths::sample(5, 9, 2, 1.0, 8);
        let before: Vec<f64> = (0..8).map(|i| p.increment(0, i as f64 / 8.0, (i + 1) as f64 / 8.0).unwrap()).collect();
        let beta_before = p.beta(1, 0.75).unwrap();
        p.refine();
        p.refine();
        let after: Vec<f64> = (0..8).map(|i| p.increment(0, i as f64 / 8.0, (i + 1) as f64 / 8.0).unwrap()).collect();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.to_bits(), b.to_bits(), "coarse increments must survive refinement");
        }
        assert_eq!(beta_before.to_bits(), p.beta(1, 0.75).unwrap().to_bits());
    }

    #[test]
    fn misaligned_query_rejected() {
        let mut p = BrownianPaths::sample(1, 0, 1, 1.0, 8);
        assert!(p.increment(0, 0.0, 0.3).is_err());
        p.refine();
        // 0.3125 = 5/16 aligns after one refinement
        assert!(p.increment(0, 0.0, 0.3125).is_ok());
    }

    #[test]
    fn deterministic_given_seeds() {
        let a = BrownianPaths::sample(42, 17, 4, 1.0, 32);
        let b = BrownianPaths::sample(42, 17, 4, 1.0, 32);
        for m in 0..4 {
            assert_eq!(
                a.increment_cells(m, 0, 32).to_bits(),
                b.increment_cells(m, 0, 32).to_bits()
            );
        }
        let c = BrownianPaths::sample(42, 18, 4, 1.0, 32);
        assert_ne!(a.increment_cells(0, 0, 32), c.increment_cells(0, 0, 32));
    }

    #[test]
    fn increment_variance_matches_cell_width() {
        // 10⁴ samples of a Δt-increment: sample variance within 5/√n of Δt
        let n = 10_000usize;
        let dt = 1.0 / 16.0;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for path in 0..n {
            let p = BrownianPaths::sample(1234, path as u64, 1, 1.0, 16);
            let x = p.increment_cells(0, 3, 4);
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let tol = 5.0 / (n as f64).sqrt() * dt;
        assert!(
            (var - dt).abs() < tol,
            "sample variance {var} vs dt {dt} (tol {tol})"
        );
    }

    #[test]
    fn midpoint_conditional_variance() {
        // bridge residual c1 − parent/2 has variance w/4; 10⁴ bridges, 3 SE
        let n = 10_000usize;
        let w = 1.0 / 8.0;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for path in 0..n {
            let mut p = BrownianPaths::sample(77, path as u64, 1, 1.0, 8);
            let parent = p.increment_cells(0, 2, 3);
            p.refine();
            let c1 = p.increment_cells(0, 4, 5);
            let xi = c1 - 0.5 * parent;
            sum += xi;
            sumsq += xi * xi;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let target = w / 4.0;
        // Var of the sample variance of N(0,σ²) ≈ 2σ⁴/n
        let se = (2.0 * target * target / n as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "bridge variance {var} vs {target}");
    }

    #[test]
    fn modes_are_decorrelated() {
        let n = 4_000usize;
        let mut dot = 0.0;
        for path in 0..n {
            let p = BrownianPaths::sample(9, path as u64, 2, 1.0, 4);
            dot += p.increment_cells(0, 0, 4) * p.increment_cells(1, 0, 4);
        }
        let corr = dot / n as f64; // E[β⁰(T)β¹(T)] = 0, Var of each = 1
        assert!(corr.abs() < 5.0 / (n as f64).sqrt(), "cross-mode correlation {corr}");
    }

    // --- stochastic half-interval ---

    fn st_setup(
        coupling: Coupling,
        k_max: usize,
        amp: f64,
    ) -> (SimParams, GalerkinBasis, NoiseModes) {
        let mut params = base_params();
        params.grid_n = 129;
        params.n_modes = 6;
        params.noise = NoiseConfig { k_max, decay_a: 2.0, amp, coupling };
        let grid = params.grid().unwrap();
        let basis = build_basis(grid, params.n_modes, params.d).unwrap();
        let modes = build_noise_modes(grid, &params.noise).unwrap();
        (params, basis, modes)
    }

    fn cosine_state(_params: &SimParams, basis: &GalerkinBasis, u_amp: f64) -> SimState {
        let grid = basis.grid;
        let values = (0..grid.len())
            .map(|i| 1.0 + 0.3 * (std::f64::consts::PI * grid.coord(i)[0]).cos())
            .collect();
        let rho = DensityField::new(grid, values).unwrap();
        let mut u = vec![0.0; basis.dim];
        for (j, slot) in u.iter_mut().enumerate() {
            *slot = u_amp / (1.0 + j as f64);
        }
        let mstar = assemble_mass(&rho, basis).apply(&u);
        SimState { t: 0.0, rho, u, mstar }
    }

    #[test]
    fn stochastic_half_amp_zero_is_identity() {
        let (params, basis, modes) = st_setup(Coupling::Constant, 4, 0.0);
        let mut state = cosine_state(&params, &basis, 0.05);
        let before = state.clone();
        let paths =
            BrownianPaths::sample(params.seed, 0, 4, params.tau, params.n_st_substeps());
        let tally =
            stochastic_halfstep(&mut state, &params, &basis, &modes, &paths, 1).unwrap();
        assert_eq!(state.u, before.u, "amp = 0 must leave the velocity untouched");
        assert_eq!(state.rho.values, before.rho.values, "density is frozen");
        assert_eq!(state.mstar, before.mstar, "m* = M·u is reproducible");
        assert_eq!(tally.work, 0.0);
        assert_eq!(tally.ito, 0.0);
        assert!((state.t - params.tau).abs() < 1e-12);
    }

    #[test]
    fn k_max_zero_matches_amp_zero() {
        let (params_a, basis, modes_a) = st_setup(Coupling::Constant, 0, 0.02);
        let (params_b, _, modes_b) = st_setup(Coupling::Constant, 6, 0.0);
        let mut state_a = cosine_state(&params_a, &basis, 0.05);
        let mut state_b = state_a.clone();
        let paths =
            BrownianPaths::sample(7, 0, 6, params_a.tau, params_a.n_st_substeps());
        stochastic_halfstep(&mut state_a, &params_a, &basis, &modes_a, &paths, 1).unwrap();
        stochastic_halfstep(&mut state_b, &params_b, &basis, &modes_b, &paths, 1).unwrap();
        assert_eq!(state_a.u, state_b.u, "no modes and zero amplitude must agree exactly");
        assert_eq!(state_a.mstar, state_b.mstar);
    }

    #[test]
    fn constant_coupling_increment_telescopes() {
        // additive noise: the EM sum collapses to √2·s·(β(τ)−β(0))
        let (params, basis, modes) = st_setup(Coupling::Constant, 1, 0.02);
        let mut state = cosine_state(&params, &basis, 0.0);
        let reg = RegularizedNoise::new(&state.rho, &params, &basis, &modes).unwrap();
        let s = reg.coeffs(&state.u).unwrap().swap_remove(0);
        let paths =
            BrownianPaths::sample(params.seed, 3, 1, params.tau, params.n_st_substeps());
        stochastic_halfstep(&mut state, &params, &basis, &modes, &paths, 1).unwrap();
        let total = paths.increment(0, 0.0, params.tau).unwrap();
        for (j, (&u, &sj)) in state.u.iter().zip(&s).enumerate() {
            let expect = std::f64::consts::SQRT_2 * sj * total;
            assert!(
                (u - expect).abs() < 1e-13 * (1.0 + expect.abs()),
                "coefficient {j}: {u} vs telescoped {expect}"
            );
        }
    }

    #[test]
    fn kinetic_ledger_closes_exactly() {
        // ΔK = work + ΣΣ (s_k·Ms_m) Δβ_k Δβ_m holds to roundoff per substep
        // for velocity-independent coupling
        let (params, basis, modes) = st_setup(Coupling::SaturatingDensity, 3, 0.02);
        let mut state = cosine_state(&params, &basis, 0.05);
        let mass = assemble_mass(&state.rho, &basis);
        let reg = RegularizedNoise::new(&state.rho, &params, &basis, &modes).unwrap();
        let s = reg.coeffs(&state.u).unwrap();
        let ms: Vec<Vec<f64>> = s.iter().map(|sk| mass.apply(sk)).collect();
        let k0: f64 =
            0.5 * state.mstar.iter().zip(&state.u).map(|(m, v)| m * v).sum::<f64>();
        let paths =
            BrownianPaths::sample(params.seed, 11, 3, params.tau, params.n_st_substeps());
        let tally =
            stochastic_halfstep(&mut state, &params, &basis, &modes, &paths, 1).unwrap();
        let k1: f64 =
            0.5 * state.mstar.iter().zip(&state.u).map(|(m, v)| m * v).sum::<f64>();

        let n_sub = params.n_st_substeps();
        let dt = params.tau / n_sub as f64;
        let mut quad = 0.0;
        for sub in 0..n_sub {
            let ta = sub as f64 * dt;
            let tb = (sub + 1) as f64 * dt;
            for k in 0..3 {
                let dbk = paths.increment(k, ta, tb).unwrap();
                for m in 0..3 {
                    let dbm = paths.increment(m, ta, tb).unwrap();
                    let sms: f64 = s[k].iter().zip(&ms[m]).map(|(a, b)| a * b).sum();
                    quad += sms * dbk * dbm;
                }
            }
        }
        let lhs = k1 - k0;
        let rhs = tally.work + quad;
        let scale = k0.abs() + tally.work.abs() + quad.abs() + 1e-30;
        assert!(
            (lhs - rhs).abs() < 1e-12 * scale,
            "ΔK = {lhs:.6e} vs work+quadratic = {rhs:.6e}"
        );
        // and the compensator matches the quadratic term in expectation-shape:
        // same order of magnitude, exactly Σ λ-weighted (s·Ms)·τ here
        let mut ito_direct = 0.0;
        for k in 0..3 {
            let sms: f64 = s[k].iter().zip(&ms[k]).map(|(a, b)| a * b).sum();
            ito_direct += sms * params.tau;
        }
        assert!((tally.ito - ito_direct).abs() < 1e-13 * ito_direct.abs().max(1e-30));
    }

    #[test]
    fn additive_variance_matches_ito_isometry() {
        // ρ ≡ 1, constant coupling: mode j lands on basis coefficient j, so
        // Var[u_j(τ)] = 2·λ_j·τ exactly for the EM scheme.
        let (params, basis, modes) = st_setup(Coupling::Constant, 2, 0.02);
        let grid = params.grid().unwrap();
        let n_paths = 600usize;
        let mut sumsq = [0.0f64; 2];
        for p in 0..n_paths {
            let mut state = SimState {
                t: 0.0,
                rho: DensityField::constant(grid, 1.0),
                u: vec![0.0; basis.dim],
                mstar: vec![0.0; basis.dim],
            };
            let paths =
                BrownianPaths::sample(123, p as u64, 2, params.tau, params.n_st_substeps());
            stochastic_halfstep(&mut state, &params, &basis, &modes, &paths, 1).unwrap();
            sumsq[0] += state.u[0] * state.u[0];
            sumsq[1] += state.u[1] * state.u[1];
        }
        for j in 0..2 {
            let var = sumsq[j] / n_paths as f64;
            let target = 2.0 * lambda(&params.noise, j) * params.tau;
            let se = target * (2.0 / n_paths as f64).sqrt();
            assert!(
                (var - target).abs() < 3.5 * se,
                "mode {j}: sample variance {var:.4e} vs 2λτ = {target:.4e}"
            );
        }
    }

    #[test]
    fn momentum_coupling_self_converges_in_dt() {
        // same Brownian paths at dt, dt/2, dt/4: the mean EM self-difference
        // must shrink ~√2 per halving (pathwise ratios fluctuate too much)
        let (mut params, basis, modes) = st_setup(Coupling::SaturatingMomentum, 3, 0.1);
        let state0 = cosine_state(&params, &basis, 0.2);
        let base = params.n_st_substeps();
        let finest = 4 * base;
        let dist = |x: &[f64], y: &[f64]| -> f64 {
            x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        };
        let n_paths = 40usize;
        let (mut mean1, mut mean2) = (0.0, 0.0);
        for p in 0..n_paths {
            let paths = BrownianPaths::sample(5, p as u64, 3, params.tau, finest);
            let mut run = |n_sub: usize| -> Vec<f64> {
                params.dt_st = params.tau / n_sub as f64;
                let mut s = state0.clone();
                stochastic_halfstep(&mut s, &params, &basis, &modes, &paths, 1).unwrap();
                s.u
            };
            let (a, b, c) = (run(base), run(2 * base), run(4 * base));
            mean1 += dist(&a, &b) / n_paths as f64;
            mean2 += dist(&b, &c) / n_paths as f64;
        }
        assert!(mean1 > 0.0, "state-coupled noise must feel the substep size");
        assert!(
            mean2 < mean1 / 1.2,
            "EM self-difference should shrink under refinement: {mean1:.3e} → {mean2:.3e}"
        );
    }

    #[test]
    fn frozen_density_is_bit_identical_under_momentum_coupling() {
        let (params, basis, modes) = st_setup(Coupling::SaturatingMomentum, 4, 0.05);
        let mut state = cosine_state(&params, &basis, 0.1);
        let before = state.rho.values.clone();
        let paths =
            BrownianPaths::sample(21, 2, 4, params.tau, params.n_st_substeps());
        stochastic_halfstep(&mut state, &params, &basis, &modes, &paths, 5).unwrap();
        assert_eq!(state.rho.values, before);
        assert!(state.u.iter().any(|&v| v != 0.0));
    }
}
