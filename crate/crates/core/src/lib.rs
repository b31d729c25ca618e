//! Bidirectional-training workbench for neural machine translation.
//!
//! The crate covers the whole loop on a single machine: corpus algebra
//! ([`corpus`]), subword segmentation ([`tokenizer`]), a small transformer
//! with exact gradients ([`model`]), the two-phase trainer ([`trainer`]),
//! beam decoding and evaluation ([`decode`], [`eval`]) and synthetic tasks
//! with known answers ([`synth`]).

pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod tokenizer;
pub mod trainer;
pub mod special;
pub mod synth;

pub use error::{Error, Result};
