//! Semi-supervised confidence distribution learning (ssCDL) for
//! uncertain knowledge graph completion.
//!
//! The crate trains embedding models on confidence-scored triples via
//! meta self-training between a relational learner and a pseudo
//! confidence distribution generator, and evaluates both confidence
//! prediction (MSE/MAE) and link prediction (WMRR/Hits@1).

pub mod autodiff;
pub mod confdist;
pub mod dataset;
pub mod error;

pub use autodiff::Real;
pub use error::{Error, Result};
