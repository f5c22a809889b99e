//! Aggregated-search page construction as a sequential decision process.
//!
//! A GRU encodes the query and the partially built page; a bilinear policy
//! scores the remaining blue-links and vertical modules. Module embeddings
//! combine projected module content with a pseudo module attended from a
//! contextual ranking of blue-links. Training uses REINFORCE plus two
//! self-supervised losses.

pub mod corpus;
pub mod env;
pub mod metrics;
pub mod neural;
pub mod policy;
pub mod ssl;
pub mod trainer;

pub use corpus::{Dataset, QueryRecord, Schema};
pub use env::{run_episode, DecodeMode, EpisodeOptions, EpisodeTrace, ItemRef, RankingState};
pub use metrics::{MetricKind, MetricSpec};
pub use neural::{GruMode, ModelParams, ModelShape};
pub use policy::ContextMode;
pub use trainer::{train, TrainConfig, TrainReport};

#[cfg(test)]
pub(crate) mod testutil;
