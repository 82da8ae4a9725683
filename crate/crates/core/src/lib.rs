//! Numerics for parametrised self-similar measures on the line and their
//! planar projections.
//!
//! The crate is organised bottom-up:
//!
//! - [`ifs_core`]: similitudes, words, composition points, gap statistics.
//! - [`param_family`]: analytic translation expressions `t_j(u)` and their
//!   derivative jets.
//! - [`type_model`]: the multiplicity-type decomposition of length-`N` words,
//!   atomic measures and the small/big re-typed models.
//! - [`random_model`]: sampled type sequences and the induced random infinite
//!   convolutions.
//! - [`fourier`]: Fourier transforms, the certified infinite product and decay
//!   estimation.
//! - [`transversality`]: order-`K` transversality certificates and covering
//!   counts of near-coincidence sets.
//! - [`erdos_kahane`]: digit sequences, branching bounds and a brute-force
//!   scan of the resonant ratio set.
//! - [`measure_numerics`]: level-`n` approximations, convolution, density
//!   and box-dimension diagnostics, disintegration checks.
//! - [`projection_app`]: planar systems, their projection families, presets
//!   and angle scans.
//! - [`cli`]: the `selfsim` command-line front end.
//!
//! Diagnostics of absolute continuity are heuristic: finite computations
//! produce `*-consistent` verdicts, never proofs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod erdos_kahane;
pub mod error;
pub mod fourier;
pub mod ifs_core;
pub mod measure_numerics;
pub mod param_family;
pub mod projection_app;
pub mod random_model;
pub mod transversality;
pub mod type_model;

pub use error::{Error, Result};
