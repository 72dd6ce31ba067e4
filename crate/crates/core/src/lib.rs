//! Character-level named entity recognition toolkit.
//!
//! A small transformer encoder, pre-training example builders (static,
//! dynamic and lexicon span masking, sentence-pair and dialogue sampling),
//! a fully-connected projection plus linear-chain CRF tagging head with
//! BIO-constrained decoding, and entity-level precision/recall/F1.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod pretrain;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
