//! Desk-scale simulator for barotropic compressible flow with stochastic
//! momentum forcing.
//!
//! The continuous model is the isentropic compressible Navier–Stokes system
//! on the unit box with pressure p(ρ) = ρ^γ + δρ^β, artificial viscosity
//! ε ≥ 0 in the mass equation, and a truncated series of multiplicative
//! Brownian forcings in the momentum equation. Time is advanced by an
//! alternating half-interval schedule of period 2τ: on the first half of each
//! period the deterministic dynamics run at double speed, on the second half
//! the density freezes and the velocity diffuses under the (regularized)
//! noise scaled by √2, so that over a full period both mechanisms receive
//! their fair share of physical time.
//!
//! Space is discretized by a tensor sine Galerkin space for the velocity and
//! a vertex-centered finite-volume grid for the density, sharing one mesh.
//! The crate tracks the discrete energy ledger, mass, positivity, moment
//! bounds, and the martingale structure of the velocity increments, and puts
//! numbers against each of those claims in its test suite.
//!
//! Modules, bottom up: [`grid`] (mesh, quadrature, finite differences),
//! [`basis`] (Galerkin space), [`model`] (parameters, state, standing
//! assumptions), [`operators`] (mass matrix and momentum right-hand side),
//! [`noise`] (spectral forcing and Brownian paths), [`det`] (deterministic
//! half-interval), [`driver`] (schedule, paths, ensembles, refinement
//! sweeps), [`diagnostics`] (invariant checks and statistical tests),
//! [`config`]/[`output`]/[`cli`] (file formats and the command-line tool).

pub mod basis;
pub mod cli;
pub mod config;
pub mod det;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod grid;
pub mod guide;
pub mod model;
pub mod noise;
pub mod operators;
pub mod oracle;
pub mod output;
