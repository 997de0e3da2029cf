// SPDX-License-Identifier: MIT OR Apache-2.0

//! Knowledge editing by steering last-layer activations.
//!
//! An edit maps activations of prompts about an obsolete fact onto the
//! distribution of activations that produce the updated fact, using the
//! closed-form linear optimal-transport map between the two Gaussian
//! summaries. A centroid-threshold detector decides per prompt whether the
//! edit applies, so edits stay independent and can be added or removed freely.
//!
//! Modules:
//! - [`linalg`]: means, regularized covariances, PSD square roots
//! - [`ot`]: transport and uniform-shift maps
//! - [`registry`]: edits, scope detection, persistence
//! - [`steering`]: the inference-time intervention and backend contract
//! - [`toy`]: a synthetic model and benchmark with exact ground truth
//! - [`eval`]: metrics, sweeps, ablation
//! - [`io`]: activation-set and benchmark file formats

pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod ot;
pub mod records;
pub mod registry;
pub mod steering;
pub mod toy;

pub use error::{Result, SakeError};
pub use linalg::{
    empirical_covariance, empirical_mean, psd_inv_sqrt, psd_sqrt, ActivationVector, GaussianSummary, SymMatrix,
};
pub use ot::{apply_map, fit_ot_map, fit_uniform_shift, LinearMap, MapKind};
pub use records::{Category, PromptRecord, Role};
pub use registry::{Distance, EditEntry, EditSpec, Registry, Representation, ScopeDetector};
pub use steering::{edited_forward, steer_activation, LmBackend, SteeringOutcome, SteeringPolicy};
