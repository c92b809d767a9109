//! Contrastive-learning laboratory: the NT-Xent / decoupled / balanced /
//! generalized NT-Xent loss family with exact gradients, numerical verifiers
//! for the attracting and repelling upper bounds, a small normalized MLP
//! encoder, synthetic labeled data, frozen-representation evaluation and a
//! deterministic experiment harness.

pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod seed;
pub mod synthdata;

pub use error::{Error, Result};
