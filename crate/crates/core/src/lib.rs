//! Training and evaluation framework for video action-quality assessment.
//!
//! The crate is organized bottom-up:
//!
//! * [`diffcore`]: a small reverse-mode tensor engine with a finite-difference checker.
//! * [`ranking`]: exact and soft ranks, Spearman correlation, and the MSE–Spearman loss.
//! * [`data`]: judge-score aggregation, frame sampling, preprocessing, manifests and a
//!   synthetic clip generator.
//! * [`model`]: the four regression architectures at toy scale.
//! * [`train`]: AdamW, the training loop and resumable checkpoints.
//! * [`harness`]: evaluation, hyperparameter sweeps and config files.

pub mod data;
pub mod diffcore;
pub mod error;
pub mod harness;
pub mod model;
pub(crate) mod par;
pub mod ranking;
pub mod seed;
pub mod train;

pub use diffcore::{ParamStore, Tensor};
pub use error::{Error, Result};
