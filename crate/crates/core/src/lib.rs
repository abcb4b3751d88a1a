//! Scheduling dimension reduction for affine linear parameter-varying (LPV)
//! state-space models.
//!
//! Given trajectory data of a scheduling variable `ρ` and an affine LPV model
//! `M(ρ) = M_0 + Σ M_i ρ_i`, the reducers in this crate construct a
//! lower-dimensional scheduling variable `φ = μ(ρ)` together with a reduced
//! affine model `M̂(φ)`. Four methods are available:
//!
//! * [`pca`]: truncated SVD of the normalized data matrix, closed-form model.
//! * [`kpca`]: kernel PCA followed by a least-squares matrix refit.
//! * [`ae`]: a two-layer logsig autoencoder followed by a matrix refit.
//! * [`dnn`]: a ReLU encoder trained end to end with a linear matrix-mapping
//!   output layer whose weights are the reduced model matrices.
//!
//! The [`manipulator`] module provides the two-link robot arm benchmark used to
//! compare them, and [`evaluation`] the cost metrics and sweeps.

pub mod ae;
pub mod checks;
pub mod cli;
pub mod dnn;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod kpca;
pub mod manipulator;
pub mod model;
pub mod nn;
pub mod pca;
pub mod reducer;
pub mod refit;
pub mod simulation;

pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{AffineLpvModel, Normalizer, TrajectoryDataset};
pub use reducer::{Method, SchedulingMap};
