//! Deterministic offline providers.
//!
//! [`OfflineGenerator`] answers each generation role with a pure template
//! over the prompt's parsed fields; [`HashEmbedder`] embeds text as an
//! L2-normalized bag of hashed character trigrams. Both are pure functions
//! of their inputs, which makes full-pipeline runs reproducible and
//! network-free.

use crate::prompt;

use super::{
    validate_embed_input, EmbeddingVector, GenerationRequest, GenerationRole, ProviderError,
    TextEmbedder, TextGenerator,
};

/// Template-based generator for hermetic runs.
pub struct OfflineGenerator;

impl OfflineGenerator {
    pub fn new() -> Self {
        Self
    }

    fn pseudoqueries(&self, request: &GenerationRequest) -> String {
        let t = prompt::extract_count(&request.prompt).unwrap_or(1).max(1);
        let columns = prompt::extract_profile_columns(&request.prompt);
        if columns.is_empty() {
            return (0..t)
                .map(|i| format!("Search for a dataset, facet {}", i + 1))
                .collect::<Vec<_>>()
                .join("\n");
        }
        let mut lines = Vec::with_capacity(t);
        for i in 0..t {
            let a = &columns[i % columns.len()];
            let b = &columns[(i + 1) % columns.len()];
            // Cycle over numeric columns for the value-range clause so the
            // queries cover the dataset rather than one attribute.
            let numeric: Vec<_> = columns
                .iter()
                .filter(|c| c.min.is_some() && c.max.is_some())
                .collect();
            let line = if numeric.is_empty() {
                format!("Search for a dataset about {} and {}", a.name, b.name)
            } else {
                let n = numeric[i % numeric.len()];
                format!(
                    "Search for a dataset about {} and {} with values from {} to {}",
                    a.name,
                    b.name,
                    n.min.unwrap(),
                    n.max.unwrap()
                )
            };
            lines.push(line);
        }
        lines.join("\n")
    }

    fn expand(&self, request: &GenerationRequest) -> String {
        let q = prompt::extract_query(&request.prompt).unwrap_or("").trim();
        let terms: Vec<&str> = q.split_whitespace().collect();
        format!(
            "{q}. This request concerns tabular data about {terms}. Relevant datasets \
             typically expose columns related to {terms} together with identifiers, \
             timestamps, and measured values.",
            q = q,
            terms = terms.join(", ")
        )
    }

    /// Split the query on coordinating `and` clauses. Single-clause queries
    /// come back unchanged, so with this provider the optimized pipeline and
    /// the no-optimization ablation retrieve over identical subqueries.
    fn decompose(&self, request: &GenerationRequest) -> String {
        let q = prompt::extract_query(&request.prompt).unwrap_or("").trim();
        let clauses: Vec<&str> = q
            .split(" and ")
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .collect();
        if clauses.is_empty() {
            q.to_string()
        } else {
            clauses.join("\n")
        }
    }

    /// Identity reranker: echo the candidate ids in prompt order.
    fn rerank(&self, request: &GenerationRequest) -> String {
        prompt::extract_candidate_ids(&request.prompt).join("\n")
    }
}

impl Default for OfflineGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl TextGenerator for OfflineGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        request.validate()?;
        Ok(match request.role {
            GenerationRole::PseudoqueryGen => self.pseudoqueries(request),
            GenerationRole::QueryExpand => self.expand(request),
            GenerationRole::QueryDecompose => self.decompose(request),
            GenerationRole::Rerank => self.rerank(request),
        })
    }

    fn id(&self) -> &str {
        "offline-template"
    }
}

/// Default dimension of the trigram hash embedder.
pub const DEFAULT_HASH_DIM: usize = 256;

/// Embeds text by hashing character trigrams into a fixed-dimension bag and
/// scaling to unit length. Deterministic and locale-independent: the text is
/// lowercased, whitespace runs collapse to single spaces, and the hash is
/// FNV-1a over UTF-8 bytes.
pub struct HashEmbedder {
    dim: usize,
    id: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            id: format!("hash-trigram-{dim}"),
        }
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let normalized = normalize(text);
        let chars: Vec<char> = normalized.chars().collect();
        let mut bag = vec![0.0f64; self.dim];
        if chars.len() < 3 {
            bag[(fnv1a(normalized.as_bytes()) % self.dim as u64) as usize] += 1.0;
        } else {
            for w in chars.windows(3) {
                let gram: String = w.iter().collect();
                bag[(fnv1a(gram.as_bytes()) % self.dim as u64) as usize] += 1.0;
            }
        }
        let norm = bag.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut bag {
                *v /= norm;
            }
        }
        EmbeddingVector::new(bag)
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_DIM)
    }
}

impl TextEmbedder for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        validate_embed_input(texts)?;
        texts.iter().map(|t| self.embed_one(t)).collect()
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn id(&self) -> &str {
        &self.id
    }
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::DatasetProfile;

    fn embed(texts: &[&str]) -> Vec<EmbeddingVector> {
        let embedder = HashEmbedder::default();
        let owned: Vec<String> = texts.iter().map(|s| s.to_string()).collect();
        embedder.embed(&owned).unwrap()
    }

    #[test]
    fn test_identical_texts_identical_vectors() {
        let vs = embed(&["abc", "abc"]);
        assert_eq!(vs[0], vs[1]);
    }

    #[test]
    fn test_unit_norm() {
        for text in ["abc", "a", "the quick brown fox", "Zß漢字 mixed"] {
            let v = &embed(&[text])[0];
            assert!((v.l2_norm() - 1.0).abs() < 1e-9, "norm off for {text:?}");
        }
    }

    // Trigram-overlap oracle: the two diabetes phrases share far more
    // trigrams with each other than with the rainfall phrase, so cosine
    // similarity must order them that way.
    #[test]
    fn test_cosine_ordering_of_related_texts() {
        let vs = embed(&[
            "diabetes patient age",
            "diabetes dataset age",
            "rainfall station",
        ]);
        assert!(vs[0].cosine(&vs[1]) > vs[0].cosine(&vs[2]));
    }

    #[test]
    fn test_whitespace_and_case_insensitive() {
        let vs = embed(&["Hello  World", "hello world"]);
        assert_eq!(vs[0], vs[1]);
    }

    #[test]
    fn test_empty_text_rejected() {
        let embedder = HashEmbedder::default();
        assert!(matches!(
            embedder.embed(&["ok".into(), "  ".into()]),
            Err(ProviderError::InvalidInput(_))
        ));
        assert!(matches!(
            embedder.embed(&[]),
            Err(ProviderError::InvalidInput(_))
        ));
    }

    #[test]
    fn test_generator_deterministic() {
        let gen = OfflineGenerator::new();
        let req = GenerationRequest::new(
            GenerationRole::QueryExpand,
            crate::prompt::expand_prompt("diabetes datasets", 200),
        );
        let a = gen.generate(&req).unwrap();
        let b = gen.generate(&req).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("diabetes"));
    }

    #[test]
    fn test_decompose_splits_on_and() {
        let gen = OfflineGenerator::new();
        let req = GenerationRequest::new(
            GenerationRole::QueryDecompose,
            crate::prompt::decompose_prompt("rainfall by station and soil moisture", "", 5),
        );
        let out = gen.generate(&req).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines, vec!["rainfall by station", "soil moisture"]);
    }

    #[test]
    fn test_decompose_single_clause_is_identity() {
        let gen = OfflineGenerator::new();
        let req = GenerationRequest::new(
            GenerationRole::QueryDecompose,
            crate::prompt::decompose_prompt("diabetes outcomes", "bg", 5),
        );
        assert_eq!(gen.generate(&req).unwrap(), "diabetes outcomes");
    }

    #[test]
    fn test_pseudoqueries_count_and_columns() {
        let profile = DatasetProfile {
            dataset_id: "d".into(),
            row_count: 3,
            column_profiles: vec![],
            rendered_text: "**Age**: Data is of type integer. There are 3 unique values. \
                 This column is numeric. Mean: 30, Max: 40, Min: 20. Coverage spans from 20 to 40.\n\
                 **City**: Data is of type categorical. There are 2 unique values. Top values: a, b.\n"
                .into(),
        };
        let gen = OfflineGenerator::new();
        let req = GenerationRequest::new(
            GenerationRole::PseudoqueryGen,
            crate::prompt::pseudoquery_prompt(&profile, 7),
        );
        let out = gen.generate(&req).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines.iter().any(|l| l.contains("Age")));
        assert!(lines.iter().any(|l| l.contains("City")));
        assert!(lines[0].contains("values from 20 to 40"));
    }

    #[test]
    fn test_rerank_is_identity_over_candidates() {
        let gen = OfflineGenerator::new();
        let prompt = format!(
            "{} b.csv\n{} a.csv\n",
            crate::prompt::CANDIDATE_MARKER,
            crate::prompt::CANDIDATE_MARKER
        );
        let req = GenerationRequest::new(GenerationRole::Rerank, prompt);
        assert_eq!(gen.generate(&req).unwrap(), "b.csv\na.csv");
    }
}
