//! Desk-scale testbed for retriever backdoor attacks on
//! retrieval-augmented code generation, with the metrics and defenses to
//! measure efficacy, stealthiness, and detectability end to end.

pub mod backdoor;
pub mod config;
pub mod corpus;
pub mod defense;
pub mod error;
pub mod generator;
pub mod lexicon;
pub mod metrics;
pub mod pipeline;
pub mod poisonkb;
pub mod retriever;
pub mod synth;

pub use error::{Error, Result};
