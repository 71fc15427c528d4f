//! Orthographic variant analysis over contextual embeddings.
//!
//! Datapoints pair a standard word with an observed nonstandard spelling.
//! The crate generates synthetic variants, reads extracted embeddings,
//! clusters absolute and relative vector sets over a range of k and scores
//! the clusterings.

pub mod clustering;
pub mod corpus;
pub mod embedding;
pub mod metrics;
pub mod mutation;
pub mod phonetics;
pub mod seed;
pub mod pipeline;
