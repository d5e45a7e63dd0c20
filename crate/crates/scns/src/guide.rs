//! The narrative guide, compiled.
//!
//! Each chapter of the book under `book/` is included here as the
//! documentation of an empty module, so every code block in the guide is a
//! doc-test: `cargo test --doc` fails if the prose drifts from the library.
//! Read the rendered version with `mdbook serve book`, or browse these
//! modules in rustdoc — the content is identical by construction.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model_and_assumptions {}

#[doc = include_str!("../../../book/src/space.md")]
pub mod mesh_and_velocity_space {}

#[doc = include_str!("../../../book/src/operators.md")]
pub mod mass_and_drift_operators {}

#[doc = include_str!("../../../book/src/splitting.md")]
pub mod time_splitting {}

#[doc = include_str!("../../../book/src/noise.md")]
pub mod noise_and_brownian_paths {}

#[doc = include_str!("../../../book/src/invariants.md")]
pub mod energy_ledger_and_invariants {}

#[doc = include_str!("../../../book/src/statistics.md")]
pub mod ensembles_and_martingale_tests {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod command_line_and_formats {}
