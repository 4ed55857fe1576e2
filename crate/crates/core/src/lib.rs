//! Active-learning selection for biased datasets using practical Fisher
//! kernels over pooled multi-scale features of the task classifier.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: IDX loading, synthetic Gaussian datasets, class decimation
//!   and the FMAT matrix container.
//! - [`model`]: the two fixed classifiers (MLP and a small CNN) with tapped
//!   intermediate tensors, SGD training, MC dropout and rotation pretraining.
//! - [`features`]: pooled, standardized descriptors and Fisher scores.
//! - [`kernels`]: PCC and practical Fisher kernel matrices.
//! - [`pseudo`]: pseudo-label estimators for unlabeled train points.
//! - [`selection`]: misclassified-validation harvesting, greedy k-center,
//!   pool selection and the random/uncertainty baselines.
//! - [`harness`]: experiment configs, the iterative loop, reports and CLI.

// `!(x >= y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod features;
pub mod harness;
pub mod kernels;
pub mod model;
pub mod pseudo;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
