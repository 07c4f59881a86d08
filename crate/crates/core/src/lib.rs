//! Weakly supervised convolutional dictionary learning.
//!
//! Signals arrive as *bags*: an `F x T` matrix with a bag-level binary label
//! vector over `C` classes. The model learns a low-rank shared (background)
//! dictionary plus one convolutional dictionary per class, sparse activation
//! maps for every bag, and a block-diagonal projection from average-pooled
//! class activations to label scores.
//!
//! Training alternates five blocks (shared atoms, class atoms, shared
//! coefficients, class coefficients, projection). Each block takes one
//! proximal step against a diagonal majorizer of its smooth part, with
//! extrapolation weighted by the ratio of consecutive majorizers.
//!
//! Module map:
//!
//! - [`types`]: bags, atoms, dictionaries, coefficients, projection, hyperparameters
//! - [`convops`]: truncated convolution, pooling and the Toeplitz constructions
//! - [`prox`]: soft/singular-value thresholding, unit-ball QCQP, nuclear-norm ADMM
//! - [`bpgm`]: extrapolation, proximal step, majorizer check
//! - [`model`]: reconstruction, fidelity, prediction, losses, objective
//! - [`train`]: the block updates and the outer loop
//! - [`data`]: synthetic generator, noise, binary containers
//! - [`metrics`]: thresholding, confusion metrics, ROC/PR
//! - [`twodim`]: helpers for bags with more than one row

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bpgm;
pub mod convops;
pub mod data;
mod error;
pub mod metrics;
pub mod model;
pub mod prox;
pub mod train;
pub mod twodim;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate_dataset, Atom, Bag, CoefficientSet, DatasetSummary, DictionaryModel, Hyperparams,
    Projection,
};
