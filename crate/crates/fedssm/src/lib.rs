//! Deterministic simulator for federated Adam with sparse uplinks.
//!
//! Clients run Adam locally (no bias correction), upload Top-k-sparsified
//! update triples (ΔW, ΔM, ΔV), and the server merges them with FedAvg.
//! The crate covers the shared-sparse-mask variant (one mask for all three
//! tensors), the separate-mask variant, dense FedAdam, FedSGD baselines,
//! exact uplink-bit accounting, and the closed-form deviation-bound
//! diagnostics that go with the algorithm family.
//!
//! Everything is bit-reproducible: all arithmetic is f64 with fixed
//! reduction order, and every random draw comes from a stream derived
//! from (master seed, purpose, client, round, epoch).
//!
//! Start with [`federation::run_experiment`] for end-to-end runs, or the
//! `examples/` directory for one runnable program per capability.

// Guards are written `!(x > 0.0)` on purpose: the negation is true for NaN,
// so malformed inputs are rejected, where `x <= 0.0` would wave them through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod federation;
pub mod local_adam;
pub mod model;
pub mod numerics;
pub mod sparsification;
pub mod streams;

use thiserror::Error;

/// Crate-wide error type. Variants name the violated contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid argument {what}: {why}")]
    InvalidArgument { what: &'static str, why: String },
    #[error("config error: {field}: {why}")]
    Config { field: String, why: String },
    #[error("idx format error: {0}")]
    Idx(String),
    #[error("sparse update decode error: {0}")]
    Decode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
