//! Deterministic federated-learning simulator for CTC acoustic models.
//!
//! The crate bundles a small reference trainer ([`model`]), the federated
//! round loop with its aggregation weightings ([`federation`]), client
//! partitioning schemes ([`partition`]), synthetic corpora ([`synthcorpus`]),
//! and the audio heterogeneity analysis ([`heterogeneity`]).

pub mod corpus_io;
pub mod dataset;
pub mod error;
pub mod federation;
pub mod heterogeneity;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod seeding;
pub mod synthcorpus;

pub use error::{Error, Result};
