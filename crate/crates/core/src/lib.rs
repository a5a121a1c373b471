//! Tools for multi-labeler span annotation of clinical conversations:
//! voted references, relaxed and strict F-scores, inter-labeler agreement,
//! validation rules, dictionary suggestions, baseline taggers, error
//! alignment and a synthetic corpus generator.

pub mod adjudicate;
pub mod agreement;
pub mod bio;
pub mod corpus;
pub mod error;
pub mod errors;
pub mod ontology;
pub mod score;
pub mod stats;
pub mod suggest;
pub mod synth;
pub mod tagger;
pub mod turns;
pub mod validate;

pub use error::{Error, Result};
