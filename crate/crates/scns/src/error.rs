use thiserror::Error;

/// Crate-wide error type. Validation failures name the violated standing
/// assumption (Hyp 1.1–1.4) so callers can surface the exact constraint.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters:\n  {}", .violations.join("\n  "))]
    InvalidParams { violations: Vec<String> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "CFL violation at t = {t:.6}: dt_det = {dt:.3e} exceeds h/(4·d·max|u|) = {bound:.3e} (max|u| = {vmax:.3e})"
    )]
    Cfl { t: f64, dt: f64, bound: f64, vmax: f64 },

    #[error("density lost positivity at t = {t:.6} (min node value {rho_min:.3e}); refine dt or the grid")]
    Positivity { t: f64, rho_min: f64 },

    #[error("mass matrix not positive definite (rho_min = {rho_min:.3e})")]
    SingularMass { rho_min: f64 },

    #[error("interval [{t0}, {t1}] is not aligned to the Brownian path grid (cell width {cell:.3e})")]
    Misaligned { t0: f64, t1: f64, cell: f64 },

    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("region error: {0}")]
    Region(String),

    #[error("statistical power: {0}")]
    Power(String),

    #[error("in half-interval {interval} ({kind} substep {substep}): {source}")]
    Step {
        interval: usize,
        kind: &'static str,
        substep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
