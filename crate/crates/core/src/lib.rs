//! Content-based search for collections of tabular datasets.
//!
//! The offline phase ingests delimited files ([`corpus`]), computes a
//! statistical profile per table ([`profile`]), generates natural-language
//! pseudoqueries from each profile, embeds them, and stores the vectors with
//! dataset metadata in an L2 nearest-neighbor index ([`index`], built by
//! [`build`]). The online phase ([`pipeline`]) optimizes a free-form user
//! query into subqueries, retrieves pseudoqueries per subquery, aggregates
//! match counts per dataset, and reranks the candidate list against the
//! original query. [`eval`] scores run files against relevance judgments.
//!
//! All generation and embedding goes through the [`provider`] traits, with
//! deterministic offline implementations and a remote HTTP pair.

pub mod build;
pub mod corpus;
pub mod eval;
pub mod index;
pub mod pipeline;
pub mod profile;
pub mod prompt;
pub mod provider;

pub use corpus::{load_collection, Collection, DatasetTable};
pub use index::VectorIndex;
pub use pipeline::{QueryEngine, QueryOptions, RankedResult};
pub use profile::{profile_dataset, DatasetProfile};
pub use provider::{EmbeddingVector, TextEmbedder, TextGenerator};
