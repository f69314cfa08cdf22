//! Conditioned correspondence matching.
//!
//! The crate bundles a small reverse-mode differentiation core
//! ([`diffcore`]), a co-attention descriptor network ([`net`]), its
//! contrastive training losses and optimizer loop ([`training`]), test-time
//! match extraction ([`matcher`]), two-view geometric evaluation
//! ([`geometry`]) and deterministic synthetic data ([`synth`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffcore;
mod error;
pub mod geometry;
pub mod image;
pub mod matcher;
pub mod net;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
