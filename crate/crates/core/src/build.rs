//! Offline index construction: profile every table, generate T pseudoqueries
//! per dataset in a single generation call, embed them, and insert everything
//! into a vector index.
//!
//! Generation and embedding run in parallel across datasets; insertion is
//! sequential in dataset-id order so the finished index (and its saved file)
//! is identical run to run. Per-dataset failures are collected into the
//! build report; a build with failures is refused unless the caller opts
//! into a partial index.

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Collection;
use crate::index::{IndexError, VectorIndex};
use crate::profile::{profile_dataset_with, DatasetProfile};
use crate::prompt;
use crate::provider::{
    EmbeddingVector, GenerationRequest, GenerationRole, TextEmbedder, TextGenerator,
};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{failed} of {total} datasets failed to index; rerun with allow_partial to keep the rest")]
    PartialBuild { failed: usize, total: usize },
    #[error("no dataset could be indexed")]
    NothingIndexed,
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Per-dataset build outcome.
#[derive(Debug, Clone)]
pub struct DatasetOutcome {
    pub dataset_id: String,
    pub pseudoqueries: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub datasets_indexed: usize,
    pub records_inserted: usize,
    pub outcomes: Vec<DatasetOutcome>,
}

impl BuildReport {
    pub fn failures(&self) -> impl Iterator<Item = &DatasetOutcome> {
        self.outcomes.iter().filter(|o| o.error.is_some())
    }
}

/// Fill `index` from a loaded collection with the default missing-token
/// list: one profile and `t` pseudoqueries per dataset. The index is sealed
/// on success.
pub fn build_index(
    index: &mut VectorIndex,
    collection: &Collection,
    generator: &dyn TextGenerator,
    embedder: &dyn TextEmbedder,
    t: usize,
    allow_partial: bool,
) -> Result<BuildReport, BuildError> {
    build_index_with(
        index,
        collection,
        generator,
        embedder,
        t,
        allow_partial,
        crate::corpus::DEFAULT_MISSING_TOKENS,
    )
}

/// [`build_index`] with an explicit missing-token list for profiling.
pub fn build_index_with(
    index: &mut VectorIndex,
    collection: &Collection,
    generator: &dyn TextGenerator,
    embedder: &dyn TextEmbedder,
    t: usize,
    allow_partial: bool,
    missing_tokens: &[&str],
) -> Result<BuildReport, BuildError> {
    struct Prepared {
        profile: DatasetProfile,
        pseudoqueries: Vec<(String, EmbeddingVector)>,
    }

    let prepared: Vec<(String, Result<Prepared, String>)> = collection
        .tables
        .par_iter()
        .map(|table| {
            let result = (|| -> Result<Prepared, String> {
                let profile =
                    profile_dataset_with(table, missing_tokens).map_err(|e| e.to_string())?;
                let request = GenerationRequest::new(
                    GenerationRole::PseudoqueryGen,
                    prompt::pseudoquery_prompt(&profile, t),
                );
                let started = std::time::Instant::now();
                let output = generator.generate(&request).map_err(|e| e.to_string())?;
                tracing::info!(
                    target: "provider",
                    provider = generator.id(),
                    role = request.role.label(),
                    dataset = %table.id,
                    prompt_chars = request.prompt.len(),
                    output_chars = output.len(),
                    latency_ms = started.elapsed().as_millis() as u64,
                    "generate"
                );
                let texts = parse_pseudoqueries(&output, t);
                if texts.is_empty() {
                    return Err("generator returned no usable pseudoqueries".into());
                }
                let vectors = embedder.embed(&texts).map_err(|e| e.to_string())?;
                Ok(Prepared {
                    profile,
                    pseudoqueries: texts.into_iter().zip(vectors).collect(),
                })
            })();
            (table.id.clone(), result)
        })
        .collect();

    let mut report = BuildReport::default();
    for (dataset_id, result) in prepared {
        match result {
            Ok(p) => {
                index.add_profile(p.profile)?;
                let count = p.pseudoqueries.len();
                for (text, vector) in p.pseudoqueries {
                    index.insert(text, dataset_id.clone(), vector)?;
                    report.records_inserted += 1;
                }
                report.datasets_indexed += 1;
                report.outcomes.push(DatasetOutcome {
                    dataset_id,
                    pseudoqueries: count,
                    error: None,
                });
            }
            Err(reason) => {
                tracing::warn!(target: "build", dataset = %dataset_id, error = %reason, "dataset failed to index");
                report.outcomes.push(DatasetOutcome {
                    dataset_id,
                    pseudoqueries: 0,
                    error: Some(reason),
                });
            }
        }
    }

    let failed = report.failures().count();
    if report.datasets_indexed == 0 {
        return Err(BuildError::NothingIndexed);
    }
    if failed > 0 && !allow_partial {
        return Err(BuildError::PartialBuild {
            failed,
            total: collection.tables.len(),
        });
    }
    index.seal();
    Ok(report)
}

/// Clean generator output into pseudoquery texts: one per line, bullets and
/// numbering stripped, empty lines dropped, truncated to `t`. Repeated lines
/// are kept — a dataset indexed under the same pseudoquery twice is harmless,
/// while silently dropping below `t` is not.
fn parse_pseudoqueries(output: &str, t: usize) -> Vec<String> {
    output
        .lines()
        .map(crate::pipeline::strip_list_prefix)
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .take(t)
        .collect()
}
