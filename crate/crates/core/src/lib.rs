//! Outfit recommendation data pipeline.
//!
//! - [`catalog`]: item/outfit/user store and co-occurrence queries
//! - [`embedding`]: embedding backends, item features and cosine similarity
//! - [`history`]: user history filtering for personalized samples
//! - [`samples`]: basic, personalized and alternative sample construction
//! - [`dialogue`]: prompt rendering, dialogue generation and validation
//! - [`metrics`]: S-BERT / CTS / CIS / personalization scores and the losses
//! - [`synth`]: seeded synthetic corpus for tests and demos

pub mod catalog;
pub mod dialogue;
pub mod embedding;
pub mod history;
pub mod metrics;
pub mod par;
pub mod samples;
pub mod synth;
pub mod text;

pub use catalog::{Catalog, CatalogError, CatalogStats, FeatureStore, Item, Neighbor, Outfit, UserRecord};
pub use embedding::{cosine, Embedder, EmbedderConfig, Embedding, EmbeddingError, MockEmbedder};
pub use history::{filter_user_history, FilterConfig, FilterOutcome};
pub use samples::{SampleRecord, TaskKind};
