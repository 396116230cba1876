//! Multi-label learning with attribute-grouped loss weights and multi-kernel
//! MMD domain adaptation, on small dense networks trained from scratch.

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod grouping;
pub mod mmd;
pub mod multilabel;
pub mod nn;
pub mod transfer;

pub use error::{Error, Result};
