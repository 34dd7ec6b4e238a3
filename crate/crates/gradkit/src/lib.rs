//! Small dense-tensor engine for training graph models at desk scale.
//!
//! - [`Tensor`]: row-major `f64` arrays.
//! - [`Tape`]: define-by-run recorder with reverse-mode [`Tape::backward`].
//! - [`ParamStore`]: named parameters, learning-rate groups and Adam state.
//! - [`adam_step`], [`grad_check`] and the [`checkpoint`] format.
//!
//! Everything runs in double precision. A tape is built fresh for every
//! forward pass and borrows parameters from the store, so many tapes can be
//! recorded in parallel against one store.

pub mod adam;
pub mod check;
pub mod checkpoint;
pub mod error;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, GroupRates};
pub use check::{compare_with_central_differences, grad_check, grad_check_store, relative_error, DEFAULT_STEP};
pub use error::{GradError, Result};
pub use params::{init_params, init_params_with_std, Param, ParamGrads, ParamGroup, ParamId, ParamSpec, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
