//! Verifier-free gradient-norm rewards for group-relative policy optimization.
//!
//! A tiny autoregressive policy samples groups of completions per prompt. Each
//! completion is scored by the length-corrected norm of the gradient of its
//! mean token NLL, ranked within its group, standardized into advantages and
//! fed to a clipped surrogate objective with a KL penalty.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix it to `f64`, which is what training and checkpoints use.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod io;
pub mod model;
pub mod reward;
pub mod runner;
pub mod scalar;
pub mod tasks;
pub mod trainer;

pub use error::{Result, VigorError};
pub use scalar::Scalar;

/// Default parameter vector.
pub type Params = model::ParamVector<f64>;
/// Default completion type.
pub type Sample = model::Completion<f64>;
