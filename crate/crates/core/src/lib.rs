//! Preparation and scoring toolkit for token-augmented conversational
//! transcripts.
//!
//! Annotated conversations ([`corpus`]) are packed into utterances whose text
//! carries inline task tokens for speaker change, endpointing and named
//! entities ([`augment`]). A BPE vocabulary keeps each task token a single
//! piece ([`tokenizer`]). Decoder hypotheses with emission frames are turned
//! back into entities and timed events ([`extract`]) and scored against the
//! references ([`align`], [`metrics`], [`evaluate`]). [`simulate`] produces
//! deterministic synthetic corpora and hypotheses for end-to-end runs.

pub mod align;
pub mod augment;
pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod extract;
pub mod metrics;
pub mod simulate;
pub mod tokenizer;

pub use error::{Error, Result};
