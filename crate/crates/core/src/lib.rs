//! Fine-tuning laboratory for low-rank adapters with bias-aware regularization.
//!
//! * [`linalg`]: dense matrices, Jacobi SVD, covariance, row normalization.
//! * [`autodiff`]: define-by-run reverse mode over matrices, including
//!   gradients through singular values.
//! * [`adapters`]: LoRA / PiSSA construction, merge, NF4 error, checkpoints.
//! * [`regularizers`]: consistency, diversity and spectral losses and the two
//!   composite objectives.
//! * [`models`]: small host networks and the frozen/trainable pairing.
//! * [`trainloop`]: AdamW, schedules, corrupted corpora, experiment runner.
//! * [`gradcheck`]: the finite-difference verification suite.

pub mod adapters;
pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod models;
pub mod regularizers;
pub mod trainloop;

pub use error::{Error, Result};
pub use linalg::Matrix;
