//! Fast single-step adversarial training on a small self-contained autodiff
//! core.
//!
//! The crate covers the whole FGSM training design space: initialization
//! schemes for the single attack step ([`attack`]), loss regularizers
//! including the Lipschitz-quotient penalty ([`regularizer`]), weight
//! averaging with a quality gate ([`averaging`]), data augmentation
//! ([`augment`]), the training loop with a catastrophic-overfitting monitor
//! ([`trainer`]) and robustness evaluation tools ([`eval`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod augment;
pub mod autodiff;
pub mod averaging;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod optim;
pub mod records;
pub mod regularizer;
pub mod rng;
pub mod run;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{model_forward, ModelParams, ModelSpec};
pub use tensor::{Real, Tensor};
