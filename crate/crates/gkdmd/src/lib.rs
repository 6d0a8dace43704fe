//! Generalized kernel-based dynamic mode decomposition.
//!
//! This crate learns a rank-`k` linear operator acting on a reproducing
//! kernel Hilbert space from snapshot trajectories of a nonlinear dynamical
//! system, using only kernel evaluations (never the feature map itself), and
//! predicts future states through kernelized eigenfunctions followed by a
//! preimage optimization. An explicit-feature-map reference implementation
//! and a K-DMD baseline are included for verification and benchmarking.
//!
//! Module map:
//! - [`kernels`]: kernel evaluation, gradients, Gram assembly.
//! - [`spectral`]: dense symmetric/nonsymmetric eigensolvers, truncated
//!   pseudo-inverse factors, eigen-system pairing.
//! - [`train`]: offline fitting of the reduced model.
//! - [`predict`]: online eigenfunction evaluation, mode amplitudes,
//!   preimage solve, multi-step prediction.
//! - [`oracle`]: explicit feature-space EDMD and the K-DMD baseline.
//! - [`bench`]: synthetic systems, dataset generation, reconstruction-error
//!   metric, method comparison sweeps.

pub mod bench;
pub mod error;
pub mod kernels;
pub mod optim;
pub mod oracle;
pub mod predict;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
pub use kernels::KernelSpec;
