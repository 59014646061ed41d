//! Merge-and-bound class-incremental learning.
//!
//! The crate bundles a small deterministic MLP engine ([`nn`]), the
//! weight-space operations that make up merge-and-bound training
//! ([`weightspace`]), a class-incremental harness that wires them into a
//! stage loop ([`harness`]), evaluation metrics and diagnostics
//! ([`metrics`]), desk-scale datasets ([`data`]), a binary checkpoint format
//! ([`checkpoint`]) and an experiment runner ([`experiment`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod weightspace;

pub use error::{Error, Result};
pub use nn::{Classifier, Layer, Mode, Model, MomentumState};
pub use rng::Seed;
pub use tensor::{ParameterSet, Tensor};
pub use weightspace::{BaseModelState, IntraMergeAccumulator};
