//! Data recombination for neural semantic parsing.
//!
//! The pipeline: load utterance/logical-form pairs ([`corpus`]), induce a
//! synchronous grammar and sample recombinant pairs from it ([`scfg`]), train
//! an attention-based copying sequence-to-sequence model on the mix
//! ([`neural`], [`training`]), and decode with beam search ([`decoding`]).
//! [`artificial`] holds a fully synthetic relational world for controlled
//! experiments.

pub mod artificial;
pub mod corpus;
pub mod decoding;
pub mod neural;
pub mod rng;
pub mod scfg;
pub mod training;
