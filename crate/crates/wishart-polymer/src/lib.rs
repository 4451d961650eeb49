//! Directed polymers with d×d inverse-Wishart matrix disorder.
//!
//! This crate simulates matrix-valued polymer partition functions on the
//! quadrant and on a strip, samples the associated stationary measures
//! (multiplicative Wishart walks and pinned two-layer Gibbs measures), and
//! ships a statistical verification harness for every identity the models
//! satisfy at desk scale: trace/determinant identities on the SPD cone,
//! special-function symmetries, Cauchy/Littlewood-type integral identities,
//! stationarity of increment laws along down-right paths, the point-to-line
//! martingale, and free-energy limits.
//!
//! Start with the runnable examples (`cargo run --release --example
//! quadrant_stationarity`, etc.); each major capability has one. The `wpoly`
//! binary exposes the same entry points as subcommands for scripted runs.

pub mod gibbs;
pub mod lattice;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod spd;
pub mod special;
pub mod stats;
pub mod verify;

pub use rng::Seed;
pub use spd::{PsdMatrix, SpdMatrix, SpdError, Tolerance};
