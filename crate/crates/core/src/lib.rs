//! Hybrid twin workbench for transient heat transfer.
//!
//! A linear finite-element model of a heated plate is paired with a nonlinear
//! ground truth (temperature-dependent conductivity). A mesh-based graph
//! network learns the per-node gap between the two and corrects the linear
//! model frame by frame. An autoregressive mesh graph network that learns
//! temperature increments is provided as a baseline.
//!
//! Module map:
//! - [`mesh`]: triangular meshes, node labelling and graph connectivity
//! - [`fem`]: P1 finite elements with backward Euler and Picard iteration
//! - [`nncore`]: tensors, reverse-mode autodiff, MLPs, Adam, scalers
//! - [`gnn`]: encoder / processor / decoder message passing network
//! - [`twin`]: gap and increment learners, correction and rollout
//! - [`datasets`]: dataset presets, generation, persistence
//! - [`harness`]: metrics, experiments, calibration and exports

pub mod datasets;
pub mod error;
pub mod fem;
pub mod gnn;
pub mod harness;
pub mod mesh;
pub mod nncore;
pub mod twin;

pub use error::{Error, Result};
