//! Numerical laboratory for gradient-boosted attention and its rivals.
//!
//! The crate is organized around five subsystems:
//!
//! - [`tensor`] / [`tape`] / [`optim`] / [`gradcheck`]: dense `f64` tensors
//!   with reverse-mode autodiff, Adam/AdamW, and a finite-difference checker.
//! - [`attention`] / [`hopfield`] / [`bayes`]: the mechanisms under study —
//!   multi-head attention, gradient-boosted attention, Twicing, the Hopfield
//!   update/energy/iteration, and the closed-form Bayes-optimal denoiser.
//! - [`analysis`] / [`qp`] / [`linalg`]: executable proposition checks —
//!   convex-hull distance by simplex QP, row-span residuals, orthogonal
//!   erasure, the analytic LayerNorm Jacobian, attention entropy.
//! - [`task`] / [`retrieval`] / [`report`]: the synthetic pattern-retrieval
//!   experiments (negative results, rounds/gate/scaling ablations) with
//!   CSV/JSON reporting.
//! - [`corpus`] / [`lm`]: a character-level toy language model with
//!   switchable attention mechanism and normalization placement.

pub mod analysis;
pub mod attention;
pub mod bayes;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod hopfield;
pub mod linalg;
pub mod lm;
pub mod optim;
pub mod qp;
pub mod report;
pub mod retrieval;
pub mod rng;
pub mod tape;
pub mod task;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Artifact version string embedded into every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
