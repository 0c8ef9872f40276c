//! GRU sequence-to-sequence toolkit for short-text dialogue, built around a
//! verifiable tape-based autodiff core.
//!
//! The decoder's first word can come from either of two mechanisms, switched
//! per run: the classic start-symbol step, or a learned head that scores the
//! decoder embedding matrix directly against the encoder's final state. The
//! crate covers the full loop at desk scale: corpus ingestion, training with
//! RMSprop, beam-search decoding, checkpointing, and first-word
//! accuracy/diversity plus BLEU and inter-rater agreement metrics.

pub mod corpus;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod ndcore;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
