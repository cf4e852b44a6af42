//! Axial-shift MLP vision backbone at desk scale.
//!
//! From-scratch dense tensors with reverse-mode autodiff, the axial shift
//! operation and block, the hierarchical backbone and its ablation baselines,
//! closed-form parameter/MAC accounting with instrumented cross-checks, and a
//! small deterministic training harness with bit-exact checkpoints.
//!
//! Wide precision (`f64`) backs every oracle and gradient check; narrow
//! precision (`f32`) is the training default. Heavy inner loops are
//! data-parallel over rayon when the `parallel` feature (default) is enabled
//! and identical bit-for-bit to the sequential fallback.

pub mod analysis;
pub mod backbone;
pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod fixtures;
pub mod layers;
pub mod par;
pub mod params;
pub mod rng;
pub mod shift;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{ops::PadMode, tape::Tape, tape::Var, Real, Tensor};
