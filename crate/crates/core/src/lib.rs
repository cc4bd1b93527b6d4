//! Gated auto-encoder toolkit: relational auto-encoder training, closed-form
//! energy scoring, RBM free-energy cross-checks, class-specific energy
//! classifiers, and gradient-based multi-label refinement.
//!
//! Module map:
//!
//! - [`gae`] — parameters, encoder/decoders, reconstruction objectives,
//!   analytic gradients
//! - [`energy`] — vector field, integrability check, closed-form energies
//! - [`rbm`] — independent RBM free-energy oracles and parameter mappings
//! - [`train`] — mini-batch SGD with momentum, weight decay, denoising
//! - [`classify`] — per-class model ensembles with calibrated softmax scoring
//! - [`structured`] — MLP pre-classifier plus label-space energy refinement
//! - [`data`] — dataset IO, standardization, folds, synthetic generators
//! - [`archive`] — bit-exact model persistence
//! - [`verify`] — the numerical property suites behind `gaescore verify`

pub mod archive;
pub mod classify;
pub mod data;
pub mod energy;
pub mod error;
pub mod gae;
pub mod rbm;
pub mod structured;
pub mod train;
pub mod util;
pub mod verify;

pub use error::{Error, Result};
pub use gae::{ActivationKind, GaeParams, MappingState, MeanAeParams, ReconstructionMode};
pub use train::{CorruptTarget, CorruptionKind, TrainConfig, TrainReport};
