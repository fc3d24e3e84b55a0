//! Analysis engine for exploring where a model under evaluation fails.
//!
//! A [`Dataset`] holds per-sample metrics and embeddings. Subgroups come from clustering
//! ([`clustering::cluster`]), concept search ([`search::concept_search`]) or explicit member
//! lists, and are summarised, compared and mined for candidate issues through a
//! [`gateway::Gateway`] that fronts the embedding, captioning and language models.

pub mod clustering;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod gateway;
pub mod hashing;
pub mod hypothesis;
pub mod projection;
pub mod prompt;
pub mod search;
pub mod stats;
pub mod subgroup;

pub use dataset::{Dataset, EmbeddingStore, MetricDescriptor, MetricDirection, SampleRecord};
pub use error::{Error, Result};
pub use gateway::{Gateway, StubGateway};
pub use subgroup::{Subgroup, SubgroupKind};
