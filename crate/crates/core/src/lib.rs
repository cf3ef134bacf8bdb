//! Non-autoregressive translation with dependency-aware decoding.
//!
//! The crate bundles a small Transformer encoder–decoder built on its own
//! autodiff substrate ([`numerics`]), forward/backward curriculum
//! pre-training for the parallel decoder ([`training`]), the attentive
//! decoder-input transformation over the target embedding space
//! ([`model`]), and the evaluation protocol ([`eval`]).

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
