//! Egocentric action recognition on precomputed features: a latent
//! secondary-region frame scorer, a two-level recurrent model over frames
//! and shots, visual and temporal augmentation, and evaluation metrics.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod hlstm;
pub mod linalg;
pub mod lstm;
pub mod optim;
pub mod par;
pub mod scorer;
pub mod temporal;

pub use error::{Error, Result};
