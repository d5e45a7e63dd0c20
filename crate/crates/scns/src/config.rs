//! On-disk run configuration: strict TOML in, validated parameters and
//! initial data out.
//!
//! Parsing is deliberately unforgiving: unknown keys and duplicate keys are
//! rejected rather than ignored, because a silently dropped `dt_det` is a
//! wrong simulation, not a convenience. Missing keys fall back to the
//! documented defaults (the desk-scale d = 1 configuration), so a minimal
//! file — even an empty one — is a complete run specification.
//!
//! The value of every float field survives a serialize/parse round trip bit
//! for bit, which keeps "echo the config into the artifact directory"
//! lossless.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{DensityField, InitialData, SimParams};
use crate::noise::{Coupling, NoiseConfig};

/// Complete run specification. `seed` sits at the top level (TOML wants
/// scalars before tables); everything else is grouped by concern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base RNG seed; combined with the path index for per-path streams.
    pub seed: u64,
    pub grid: GridSection,
    pub galerkin: GalerkinSection,
    pub time: TimeSection,
    pub physics: PhysicsSection,
    pub noise: NoiseConfig,
    pub initial: InitialSection,
    pub output: OutputSection,
    pub ensemble: EnsembleSection,
    pub sweep: SweepSection,
    pub check: CheckSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Spatial dimension, 1 or 2.
    pub d: usize,
    /// Nodes per dimension.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GalerkinSection {
    /// Velocity sine modes per dimension.
    pub n_modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub t_final: f64,
    /// Splitting half-period; t_final/tau must be a positive even integer.
    pub tau: f64,
    pub dt_det: f64,
    pub dt_st: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSection {
    pub mu: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Artificial mass diffusion ε.
    pub eps: f64,
    /// Artificial pressure weight δ (also the data-regularization floor).
    pub delta: f64,
}

/// Built-in initial conditions plus a file escape hatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcKind {
    /// ρ ≡ 1.
    Constant,
    /// ρ = 1 + rho_amp·exp(−|x−½|²/width).
    GaussianBump,
    /// ρ = max(0, 1 − vac_depth·exp(−|x−½|²/width)); vac_depth > 1 carves a
    /// genuine vacuum region.
    VacuumPatch,
    /// Nodal (ρ, m) from a JSON file (see [`InitialFile`]).
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub kind: IcKind,
    pub rho_amp: f64,
    /// Momentum amplitude: m = m_amp·sin(πx₁)·ρ along the first axis.
    pub m_amp: f64,
    pub width: f64,
    pub vac_depth: f64,
    /// Path of the JSON data file when kind = "file".
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Sample every `stride`-th τ-boundary.
    pub stride: usize,
    /// Store density snapshots per sample.
    pub keep_states: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub n_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// τ-refinement levels: τ, τ/2, …, τ/2^(levels−1).
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    /// Flux region box; a single entry is broadcast across axes in 2-D.
    pub region_lo: Vec<f64>,
    pub region_hi: Vec<f64>,
    /// Martingale test window [s, t] (sampled τ-boundaries).
    pub martingale_s: f64,
    pub martingale_t: f64,
    /// Brownian mode for the cross-variation condition.
    pub martingale_mode: usize,
    /// Velocity coefficient index of the martingale test vector.
    pub phi_index: usize,
    /// Powers p for the moment summary.
    pub moment_orders: Vec<u32>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: 42,
            grid: GridSection::default(),
            galerkin: GalerkinSection::default(),
            time: TimeSection::default(),
            physics: PhysicsSection::default(),
            noise: NoiseConfig { k_max: 8, decay_a: 2.0, amp: 0.02, coupling: Coupling::Constant },
            initial: InitialSection::default(),
            output: OutputSection::default(),
            ensemble: EnsembleSection::default(),
            sweep: SweepSection::default(),
            check: CheckSection::default(),
        }
    }
}

impl Default for GridSection {
    fn default() -> GridSection {
        GridSection { d: 1, n: 257 }
    }
}

impl Default for GalerkinSection {
    fn default() -> GalerkinSection {
        GalerkinSection { n_modes: 8 }
    }
}

impl Default for TimeSection {
    fn default() -> TimeSection {
        TimeSection { t_final: 1.0, tau: 0.125, dt_det: 0.125 / 128.0, dt_st: 0.125 / 64.0 }
    }
}

impl Default for PhysicsSection {
    fn default() -> PhysicsSection {
        PhysicsSection { mu: 0.1, lambda: 0.1, gamma: 2.0, beta: 5.0, eps: 0.01, delta: 0.01 }
    }
}

impl Default for InitialSection {
    fn default() -> InitialSection {
        InitialSection {
            kind: IcKind::GaussianBump,
            rho_amp: 0.25,
            m_amp: 0.05,
            width: 0.02,
            vac_depth: 1.5,
            path: None,
        }
    }
}

impl Default for OutputSection {
    fn default() -> OutputSection {
        OutputSection { stride: 1, keep_states: false }
    }
}

impl Default for EnsembleSection {
    fn default() -> EnsembleSection {
        EnsembleSection { n_paths: 16 }
    }
}

impl Default for SweepSection {
    fn default() -> SweepSection {
        SweepSection { levels: 3 }
    }
}

impl Default for CheckSection {
    fn default() -> CheckSection {
        CheckSection {
            region_lo: vec![0.25],
            region_hi: vec![0.75],
            martingale_s: 0.25,
            martingale_t: 1.0,
            martingale_mode: 0,
            phi_index: 0,
            moment_orders: vec![1, 2],
        }
    }
}

/// Nodal initial data as stored on disk for `kind = "file"`: `rho` has
/// grid.len() entries, `m` has d·grid.len() entries, component-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialFile {
    pub rho: Vec<f64>,
    pub m: Vec<f64>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Flatten into the solver parameter struct (no validation here; call
    /// `validate_params` before running).
    pub fn params(&self) -> SimParams {
        SimParams {
            d: self.grid.d,
            grid_n: self.grid.n,
            n_modes: self.galerkin.n_modes,
            tau: self.time.tau,
            t_final: self.time.t_final,
            dt_det: self.time.dt_det,
            dt_st: self.time.dt_st,
            eps: self.physics.eps,
            delta: self.physics.delta,
            mu: self.physics.mu,
            lambda: self.physics.lambda,
            gamma: self.physics.gamma,
            beta: self.physics.beta,
            noise: self.noise,
            seed: self.seed,
        }
    }

    /// Flux region with single-entry bounds broadcast to the dimension.
    pub fn region(&self) -> crate::diagnostics::Region {
        let d = self.grid.d;
        let expand = |v: &Vec<f64>| -> Vec<f64> {
            if v.len() == 1 && d > 1 {
                vec![v[0]; d]
            } else {
                v.clone()
            }
        };
        crate::diagnostics::Region {
            lo: expand(&self.check.region_lo),
            hi: expand(&self.check.region_hi),
        }
    }

    /// Build the initial (ρ, m) fields on the configured grid.
    pub fn initial_data(&self) -> Result<InitialData> {
        let grid = self.params().grid()?;
        let len = grid.len();
        let ic = &self.initial;
        let rho_values: Vec<f64> = match ic.kind {
            IcKind::Constant => vec![1.0; len],
            IcKind::GaussianBump | IcKind::VacuumPatch => (0..len)
                .map(|i| {
                    let [x, y] = grid.coord(i);
                    let r2 = (x - 0.5) * (x - 0.5)
                        + if grid.d == 2 { (y - 0.5) * (y - 0.5) } else { 0.0 };
                    let bump = (-r2 / ic.width).exp();
                    match ic.kind {
                        IcKind::GaussianBump => 1.0 + ic.rho_amp * bump,
                        _ => (1.0 - ic.vac_depth * bump).max(0.0),
                    }
                })
                .collect(),
            IcKind::File => {
                let path = ic.path.as_ref().ok_or_else(|| {
                    Error::Config("initial.kind = \"file\" requires initial.path".into())
                })?;
                let text = fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read initial data {}: {e}", path.display()))
                })?;
                let file: InitialFile = serde_json::from_str(&text).map_err(|e| {
                    Error::Config(format!("initial data {}: {e}", path.display()))
                })?;
                let rho = DensityField::new(grid, file.rho)?;
                return InitialData::new(rho, file.m);
            }
        };
        let mut m = vec![0.0; grid.d * len];
        for i in 0..len {
            // proportional to ρ: vanishes on any vacuum set automatically
            m[i] = ic.m_amp * (std::f64::consts::PI * grid.coord(i)[0]).sin() * rho_values[i];
        }
        let rho = DensityField::new(grid, rho_values)?;
        InitialData::new(rho, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_params;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back, "TOML round trip changed the config:\n{text}");
    }

    #[test]
    fn empty_and_partial_files_fill_in_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let cfg = RunConfig::from_toml_str("seed = 7\n[time]\ntau = 0.25\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.time.tau, 0.25);
        assert_eq!(cfg.time.t_final, 1.0, "untouched keys keep their defaults");
        assert_eq!(cfg.grid.n, 257);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[grid]\nd = 1\nn = 65\nnn = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nn"), "error should name the offending key: {msg}");
        let err = RunConfig::from_toml_str("typo_section = 1\n").unwrap_err();
        assert!(err.to_string().contains("typo_section"), "{err}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = RunConfig::from_toml_str("seed = 1\nseed = 2\n").unwrap_err();
        let msg = err.to_string().to_lowercase();
        assert!(msg.contains("duplicate"), "expected a duplicate-key error: {msg}");
    }

    #[test]
    fn shallow_adiabatic_exponent_in_2d_names_the_assumption() {
        let mut cfg = RunConfig::default();
        cfg.grid.d = 2;
        cfg.grid.n = 65;
        cfg.physics.gamma = 1.2;
        let err = validate_params(&cfg.params()).unwrap_err();
        assert!(
            err.to_string().contains("Hyp 1.1"),
            "γ = 1.2 in d = 2 must cite the pressure-law assumption: {err}"
        );
    }

    #[test]
    fn builtin_initial_conditions_are_admissible() {
        for kind in [IcKind::Constant, IcKind::GaussianBump, IcKind::VacuumPatch] {
            let mut cfg = RunConfig::default();
            cfg.initial.kind = kind;
            let data = cfg.initial_data().unwrap();
            assert!(data.rho0.min() >= 0.0);
            if kind == IcKind::VacuumPatch {
                assert_eq!(
                    data.rho0.min(),
                    0.0,
                    "vac_depth > 1 must carve a true vacuum region"
                );
            } else {
                assert!(data.rho0.min() > 0.0);
            }
        }
    }

    #[test]
    fn file_initial_condition_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.grid.n = 65;
        let grid = cfg.params().grid().unwrap();
        let rho: Vec<f64> = (0..grid.len()).map(|i| 1.0 + 0.1 * (i as f64).sin()).collect();
        let m = vec![0.0; grid.len()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ic.json");
        fs::write(&path, serde_json::to_string(&InitialFile { rho: rho.clone(), m }).unwrap())
            .unwrap();
        cfg.initial.kind = IcKind::File;
        cfg.initial.path = Some(path);
        let data = cfg.initial_data().unwrap();
        assert_eq!(data.rho0.values, rho);
    }

    #[test]
    fn region_broadcasts_across_axes_in_2d() {
        let mut cfg = RunConfig::default();
        cfg.grid.d = 2;
        let region = cfg.region();
        assert_eq!(region.lo, vec![0.25, 0.25]);
        assert_eq!(region.hi, vec![0.75, 0.75]);
    }
}
