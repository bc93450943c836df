//! Bone layer separation for projection radiographs.
//!
//! Overlapping bones in a radiograph are modeled as superposed absorption
//! layers. This crate provides the forward model and its derivatives, a
//! harmonic (Laplace) background estimator for the soft-tissue correction
//! `k`, a variational separator that recovers per-bone layers, phantom and
//! overlap synthesis with exact ground truth, training-loss and quality
//! metrics, and a registration harness that measures what separation buys a
//! downstream alignment task.

pub mod error;
pub mod imaging;
pub mod laplace;
pub mod losses;
pub mod metrics;
pub mod reconstruct;
pub mod registration;
pub mod separate;
pub mod synth;

pub use error::{Error, Result};
