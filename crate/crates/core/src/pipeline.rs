//! Online phase: query optimization, per-subquery retrieval with count-based
//! dataset aggregation, and listwise reranking.
//!
//! A query flows through four stages. Expansion writes a short background
//! document that enriches the query but is never retrieved against.
//! Decomposition turns query plus background into retrieval-oriented
//! subqueries. Retrieval embeds each subquery, takes its top-K pseudoqueries,
//! and scores each dataset by how many of its pseudoqueries appear across all
//! retrieved sets. Reranking judges the deduplicated candidate list against
//! the original query. Every provider boundary degrades instead of failing
//! the query: expansion falls back to an empty background, decomposition to
//! the query itself, reranking to retrieval order.

use std::collections::HashMap;

use thiserror::Error;

use crate::index::{IndexError, SearchHit, VectorIndex};
use crate::profile::DatasetProfile;
use crate::prompt;
use crate::provider::{
    GenerationRequest, GenerationRole, ProviderError, TextEmbedder, TextGenerator,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Online-phase knobs. Defaults: K=10 pseudoqueries per subquery, a candidate
/// pool of 20, at most 5 subqueries.
#[derive(Debug, Clone)]
pub struct QueryOptions {
    /// Top-K pseudoqueries retrieved per subquery.
    pub top_k: usize,
    /// Candidate pool size handed to the reranker.
    pub pool_size: usize,
    /// Upper bound on the number of subqueries.
    pub max_subqueries: usize,
    /// Toggle the expansion + decomposition stage (the ablation switch).
    pub query_optimization: bool,
    /// Toggle listwise reranking.
    pub rerank: bool,
    /// Word cap applied to the background document.
    pub background_word_cap: usize,
    /// Per-candidate word budget for profiles in the rerank prompt.
    pub profile_word_budget: usize,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self {
            top_k: 10,
            pool_size: 20,
            max_subqueries: 5,
            query_optimization: true,
            rerank: true,
            background_word_cap: 200,
            profile_word_budget: 400,
        }
    }
}

/// The optimized form of one query: background document plus subqueries.
#[derive(Debug, Clone, PartialEq)]
pub struct SubquerySet {
    pub original_query: String,
    pub background: String,
    pub subqueries: Vec<String>,
}

/// One pseudoquery match supporting a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchEvidence {
    pub subquery_index: usize,
    pub pseudoquery_id: u64,
    pub distance: f64,
}

/// A dataset in the candidate pool with its aggregated retrieval evidence.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub dataset_id: String,
    pub profile: Option<DatasetProfile>,
    /// Number of this dataset's pseudoqueries across all retrieved sets.
    pub retrieval_score: usize,
    pub best_distance: f64,
    pub matched: Vec<MatchEvidence>,
}

/// Final ranking for one query with per-stage provenance.
#[derive(Debug, Clone)]
pub struct RankedResult {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
    pub subqueries: SubquerySet,
    /// Expansion provider failed; the background degraded to "".
    pub expansion_degraded: bool,
    /// Decomposition output was unusable; subqueries degraded to the query.
    pub decompose_degraded: bool,
    /// Rerank output was unusable; order fell back to retrieval order.
    pub rerank_degraded: bool,
}

#[derive(Debug, Clone)]
pub struct RankedEntry {
    pub dataset_id: String,
    /// 1-based rank after aggregation, before reranking.
    pub retrieval_rank: usize,
    /// 1-based final rank.
    pub final_rank: usize,
    pub retrieval_score: usize,
    pub best_distance: f64,
}

impl RankedResult {
    /// Dataset ids in final order.
    pub fn ranked_ids(&self) -> Vec<&str> {
        let mut entries: Vec<&RankedEntry> = self.entries.iter().collect();
        entries.sort_by_key(|e| e.final_rank);
        entries.into_iter().map(|e| e.dataset_id.as_str()).collect()
    }
}

/// The online query pipeline over a sealed index and a provider pair.
pub struct QueryEngine<'a> {
    index: &'a VectorIndex,
    generator: &'a dyn TextGenerator,
    embedder: &'a dyn TextEmbedder,
    options: QueryOptions,
}

impl<'a> QueryEngine<'a> {
    pub fn new(
        index: &'a VectorIndex,
        generator: &'a dyn TextGenerator,
        embedder: &'a dyn TextEmbedder,
        options: QueryOptions,
    ) -> Self {
        Self {
            index,
            generator,
            embedder,
            options,
        }
    }

    pub fn options(&self) -> &QueryOptions {
        &self.options
    }

    fn generate_logged(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let started = std::time::Instant::now();
        let result = self.generator.generate(request);
        let latency_ms = started.elapsed().as_millis() as u64;
        match &result {
            Ok(text) => tracing::info!(
                target: "provider",
                provider = self.generator.id(),
                role = request.role.label(),
                prompt_chars = request.prompt.len(),
                output_chars = text.len(),
                latency_ms,
                "generate"
            ),
            Err(e) => tracing::warn!(
                target: "provider",
                provider = self.generator.id(),
                role = request.role.label(),
                error = %e,
                latency_ms,
                "generate failed"
            ),
        }
        result
    }

    fn embed_logged(&self, texts: &[String]) -> Result<Vec<crate::provider::EmbeddingVector>, ProviderError> {
        let started = std::time::Instant::now();
        let result = self.embedder.embed(texts);
        tracing::info!(
            target: "provider",
            provider = self.embedder.id(),
            texts = texts.len(),
            latency_ms = started.elapsed().as_millis() as u64,
            ok = result.is_ok(),
            "embed"
        );
        result
    }

    /// Generate the background document for a query. Provider failure
    /// degrades to an empty background with a warning; the flag reports it.
    pub fn expand_query(&self, query: &str) -> Result<(String, bool), PipelineError> {
        if query.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        let request = GenerationRequest::new(
            GenerationRole::QueryExpand,
            prompt::expand_prompt(query, self.options.background_word_cap),
        );
        match self.generate_logged(&request) {
            Ok(text) => Ok((cap_words(&text, self.options.background_word_cap), false)),
            Err(e) => {
                tracing::warn!(target: "pipeline", error = %e, "query expansion failed; continuing without background");
                Ok((String::new(), true))
            }
        }
    }

    /// Decompose a query (with its background) into subqueries. Unusable
    /// provider output falls back to `[query]`.
    pub fn decompose_query(
        &self,
        query: &str,
        background: &str,
    ) -> Result<(SubquerySet, bool), PipelineError> {
        if query.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        let request = GenerationRequest::new(
            GenerationRole::QueryDecompose,
            prompt::decompose_prompt(query, background, self.options.max_subqueries),
        );
        let (subqueries, degraded) = match self.generate_logged(&request) {
            Ok(output) => {
                let parsed = parse_subqueries(&output, self.options.max_subqueries);
                if parsed.is_empty() {
                    tracing::warn!(target: "pipeline", "decomposition output unusable; falling back to the query itself");
                    (vec![query.trim().to_string()], true)
                } else {
                    (parsed, false)
                }
            }
            Err(e) => {
                tracing::warn!(target: "pipeline", error = %e, "decomposition failed; falling back to the query itself");
                (vec![query.trim().to_string()], true)
            }
        };
        Ok((
            SubquerySet {
                original_query: query.to_string(),
                background: background.to_string(),
                subqueries,
            },
            degraded,
        ))
    }

    /// Retrieve the candidate pool for a subquery set: embed every subquery,
    /// take its top-K pseudoqueries, aggregate match counts per dataset,
    /// drop duplicate dataset ids, and keep the best `pool_size` candidates.
    pub fn retrieve_candidates(
        &self,
        subqueries: &SubquerySet,
    ) -> Result<Vec<Candidate>, PipelineError> {
        let texts: Vec<String> = subqueries.subqueries.clone();
        let vectors = self.embed_logged(&texts)?;
        let mut hits_per_subquery = Vec::with_capacity(vectors.len());
        for vector in &vectors {
            hits_per_subquery.push(self.index.search(vector, self.options.top_k)?);
        }
        let mut candidates = aggregate_hits(&hits_per_subquery);
        candidates.truncate(self.options.pool_size);
        for candidate in &mut candidates {
            candidate.profile = self.index.profile(&candidate.dataset_id).cloned();
        }
        Ok(candidates)
    }

    /// Listwise rerank of the candidate pool against the original query.
    /// The result is always a permutation of the candidate ids: parsed ids
    /// keep their first-occurrence order, unknown ids are dropped, and
    /// missing ids are appended in retrieval order. Unusable output falls
    /// back to retrieval order entirely.
    pub fn rerank(&self, query: &str, candidates: &[Candidate]) -> (Vec<usize>, bool) {
        if candidates.len() <= 1 {
            return ((0..candidates.len()).collect(), false);
        }
        let entries: Vec<prompt::RerankEntry<'_>> = candidates
            .iter()
            .map(|c| prompt::RerankEntry {
                dataset_id: &c.dataset_id,
                retrieval_score: c.retrieval_score,
                profile_text: c
                    .profile
                    .as_ref()
                    .map(|p| p.rendered_text.as_str())
                    .unwrap_or("(no profile available)"),
            })
            .collect();
        let request = GenerationRequest::new(
            GenerationRole::Rerank,
            prompt::rerank_prompt(query, &entries, self.options.profile_word_budget),
        );
        let output = match self.generate_logged(&request) {
            Ok(text) => text,
            Err(e) => {
                tracing::warn!(target: "pipeline", error = %e, "rerank failed; keeping retrieval order");
                return ((0..candidates.len()).collect(), true);
            }
        };
        match parse_rerank_order(&output, candidates) {
            Some(order) => (order, false),
            None => {
                tracing::warn!(target: "pipeline", "rerank output unusable; keeping retrieval order");
                ((0..candidates.len()).collect(), true)
            }
        }
    }

    /// Run the full online phase for one query.
    pub fn search(&self, query_id: &str, query: &str) -> Result<RankedResult, PipelineError> {
        if query.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        let (subqueries, expansion_degraded, decompose_degraded) =
            if self.options.query_optimization {
                let (background, expansion_degraded) = self.expand_query(query)?;
                let (set, decompose_degraded) = self.decompose_query(query, &background)?;
                (set, expansion_degraded, decompose_degraded)
            } else {
                (
                    SubquerySet {
                        original_query: query.to_string(),
                        background: String::new(),
                        subqueries: vec![query.trim().to_string()],
                    },
                    false,
                    false,
                )
            };

        let candidates = self.retrieve_candidates(&subqueries)?;

        let (order, rerank_degraded) = if self.options.rerank {
            self.rerank(query, &candidates)
        } else {
            ((0..candidates.len()).collect(), false)
        };

        let mut entries: Vec<RankedEntry> = Vec::with_capacity(candidates.len());
        for (final_pos, &retrieval_pos) in order.iter().enumerate() {
            let c = &candidates[retrieval_pos];
            entries.push(RankedEntry {
                dataset_id: c.dataset_id.clone(),
                retrieval_rank: retrieval_pos + 1,
                final_rank: final_pos + 1,
                retrieval_score: c.retrieval_score,
                best_distance: c.best_distance,
            });
        }

        Ok(RankedResult {
            query_id: query_id.to_string(),
            entries,
            subqueries,
            expansion_degraded,
            decompose_degraded,
            rerank_degraded,
        })
    }
}

/// Aggregate per-subquery retrieved sets at dataset level.
///
/// score(dataset) counts every appearance of the dataset's pseudoqueries
/// across all retrieved sets (occurrences count individually, including
/// repeats of the same pseudoquery under different subqueries). Duplicate
/// dataset ids collapse into one candidate. Candidates come back sorted by
/// (score desc, best distance asc, dataset id asc), untruncated.
pub fn aggregate_hits(hits_per_subquery: &[Vec<SearchHit>]) -> Vec<Candidate> {
    let mut by_dataset: HashMap<&str, Candidate> = HashMap::new();
    for (subquery_index, hits) in hits_per_subquery.iter().enumerate() {
        for hit in hits {
            let entry = by_dataset
                .entry(hit.dataset_id.as_str())
                .or_insert_with(|| Candidate {
                    dataset_id: hit.dataset_id.clone(),
                    profile: None,
                    retrieval_score: 0,
                    best_distance: f64::INFINITY,
                    matched: Vec::new(),
                });
            entry.retrieval_score += 1;
            entry.best_distance = entry.best_distance.min(hit.distance);
            entry.matched.push(MatchEvidence {
                subquery_index,
                pseudoquery_id: hit.pseudoquery_id,
                distance: hit.distance,
            });
        }
    }
    let mut candidates: Vec<Candidate> = by_dataset.into_values().collect();
    candidates.sort_by(|a, b| {
        b.retrieval_score
            .cmp(&a.retrieval_score)
            .then(a.best_distance.total_cmp(&b.best_distance))
            .then(a.dataset_id.cmp(&b.dataset_id))
    });
    candidates
}

/// Parse decomposition output into clean, distinct subqueries: one per line,
/// list bullets and numbering stripped, whitespace normalized, clamped to
/// `n_max`.
pub fn parse_subqueries(output: &str, n_max: usize) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut subqueries = Vec::new();
    for line in output.lines() {
        let stripped = strip_list_prefix(line);
        let normalized = stripped.split_whitespace().collect::<Vec<_>>().join(" ");
        if normalized.is_empty() {
            continue;
        }
        if seen.insert(normalized.clone()) {
            subqueries.push(normalized);
        }
        if subqueries.len() == n_max {
            break;
        }
    }
    subqueries
}

pub(crate) fn strip_list_prefix(line: &str) -> &str {
    let trimmed = line.trim();
    let trimmed = trimmed.trim_start_matches(['-', '*', '•']);
    // "3." / "3)" numbering
    let digits = trimmed.trim_start_matches(|c: char| c.is_ascii_digit());
    if digits.len() < trimmed.len() {
        if let Some(rest) = digits.strip_prefix(['.', ')']) {
            return rest.trim();
        }
    }
    trimmed.trim()
}

/// Parse a rerank output into a permutation of candidate positions, or
/// `None` when no candidate id can be recognized. Matching is by exact
/// line or whitespace token (with edge punctuation stripped) against the
/// candidate id set, first occurrence wins, and candidates the output
/// missed are appended in retrieval order.
fn parse_rerank_order(output: &str, candidates: &[Candidate]) -> Option<Vec<usize>> {
    let positions: HashMap<&str, usize> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (c.dataset_id.as_str(), i))
        .collect();

    let mut order: Vec<usize> = Vec::new();
    let mut used = vec![false; candidates.len()];
    let push = |pos: usize, order: &mut Vec<usize>, used: &mut Vec<bool>| {
        if !used[pos] {
            used[pos] = true;
            order.push(pos);
        }
    };

    for line in output.lines() {
        let line = strip_list_prefix(line);
        if let Some(&pos) = positions.get(line) {
            push(pos, &mut order, &mut used);
            continue;
        }
        for token in line.split_whitespace() {
            if let Some(&pos) = positions.get(token) {
                push(pos, &mut order, &mut used);
            } else if let Some(&pos) = positions.get(token.trim_matches(|c: char| !c.is_alphanumeric())) {
                // edge punctuation stripped; inner "./_-" characters survive
                push(pos, &mut order, &mut used);
            }
        }
    }

    if order.is_empty() {
        return None;
    }
    for (pos, used) in used.iter().enumerate() {
        if !used {
            order.push(pos);
        }
    }
    Some(order)
}

fn cap_words(text: &str, max_words: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= max_words {
        text.trim().to_string()
    } else {
        words[..max_words].join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{HashEmbedder, OfflineGenerator};

    /// Generator that returns a fixed string for one role and delegates the
    /// rest to the offline templates.
    struct ScriptedGenerator {
        role: GenerationRole,
        output: String,
        fallback: OfflineGenerator,
    }

    impl ScriptedGenerator {
        fn rerank(output: &str) -> Self {
            Self {
                role: GenerationRole::Rerank,
                output: output.to_string(),
                fallback: OfflineGenerator::new(),
            }
        }
    }

    impl TextGenerator for ScriptedGenerator {
        fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
            if request.role == self.role {
                Ok(self.output.clone())
            } else {
                self.fallback.generate(request)
            }
        }
        fn id(&self) -> &str {
            "scripted"
        }
    }

    struct FailingGenerator;

    impl TextGenerator for FailingGenerator {
        fn generate(&self, _request: &GenerationRequest) -> Result<String, ProviderError> {
            Err(ProviderError::ProviderUnavailable {
                attempts: 3,
                reason: "down".into(),
            })
        }
        fn id(&self) -> &str {
            "failing"
        }
    }

    /// Index five datasets, three marker pseudoqueries each, using the
    /// trigram embedder so queries containing a marker land on its dataset.
    fn marker_index(embedder: &HashEmbedder) -> VectorIndex {
        let markers = ["alphafox", "betawolf", "gammabear", "deltahawk", "epsilonlynx"];
        let mut index = VectorIndex::flat(embedder.dimension());
        for (d, marker) in markers.iter().enumerate() {
            let texts: Vec<String> = (0..3)
                .map(|i| format!("Search for a dataset about {marker} records volume {i}"))
                .collect();
            let vectors = embedder.embed(&texts).unwrap();
            for (text, vector) in texts.iter().zip(vectors) {
                index.insert(text.clone(), format!("ds{d}"), vector).unwrap();
            }
        }
        index.seal();
        index
    }

    fn hit(dataset: &str, id: u64, distance: f64) -> SearchHit {
        SearchHit {
            pseudoquery_id: id,
            dataset_id: dataset.to_string(),
            text: String::new(),
            distance,
        }
    }

    #[test]
    fn test_aggregate_counts_match_spec_example() {
        // R(u_1) = {D1, D2, D1}, R(u_2) = {D1, D3, D2}
        let hits = vec![
            vec![hit("D1", 0, 0.1), hit("D2", 1, 0.2), hit("D1", 2, 0.3)],
            vec![hit("D1", 0, 0.15), hit("D3", 3, 0.4), hit("D2", 4, 0.5)],
        ];
        let candidates = aggregate_hits(&hits);
        let scores: Vec<(&str, usize)> = candidates
            .iter()
            .map(|c| (c.dataset_id.as_str(), c.retrieval_score))
            .collect();
        assert_eq!(scores, vec![("D1", 3), ("D2", 2), ("D3", 1)]);
        assert_eq!(candidates[0].best_distance, 0.1);
        assert_eq!(candidates[0].matched.len(), 3);
    }

    #[test]
    fn test_aggregate_single_hit() {
        let hits = vec![vec![hit("D3", 7, 0.5)]];
        let candidates = aggregate_hits(&hits);
        assert_eq!(candidates.len(), 1);
        assert_eq!(candidates[0].dataset_id, "D3");
        assert_eq!(candidates[0].retrieval_score, 1);
    }

    #[test]
    fn test_aggregate_tie_broken_by_distance_then_id() {
        let hits = vec![vec![
            hit("B", 0, 0.7),
            hit("A", 1, 0.4),
            hit("B", 2, 0.7),
            hit("A", 3, 0.9),
            hit("C", 4, 0.4),
            hit("C", 5, 0.4),
        ]];
        let candidates = aggregate_hits(&hits);
        let ids: Vec<&str> = candidates.iter().map(|c| c.dataset_id.as_str()).collect();
        // all score 2; A and C tie at 0.4 best distance, id breaks it
        assert_eq!(ids, vec!["A", "C", "B"]);
    }

    // Brute-force recount oracle over randomized retrieved sets.
    #[test]
    fn test_aggregate_matches_recount_oracle() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..200 {
            let n = rng.gen_range(1..=5);
            let k = rng.gen_range(1..=10);
            let hits: Vec<Vec<SearchHit>> = (0..n)
                .map(|_| {
                    (0..k)
                        .map(|i| {
                            hit(
                                &format!("d{}", rng.gen_range(0..8)),
                                i as u64,
                                rng.gen_range(0.0..2.0),
                            )
                        })
                        .collect()
                })
                .collect();
            let candidates = aggregate_hits(&hits);

            let mut recount: HashMap<String, usize> = HashMap::new();
            for set in &hits {
                for h in set {
                    *recount.entry(h.dataset_id.clone()).or_default() += 1;
                }
            }
            assert_eq!(candidates.len(), recount.len());
            let total: usize = candidates.iter().map(|c| c.retrieval_score).sum();
            assert_eq!(total, n * k);
            for c in &candidates {
                assert_eq!(c.retrieval_score, recount[&c.dataset_id]);
                assert_eq!(c.retrieval_score, c.matched.len());
                assert!(c.retrieval_score <= n * k);
            }
        }
    }

    // The aggregation invariant against a live index: retrieve_candidates
    // scores must equal a recount over the per-subquery retrieved sets taken
    // straight from the index.
    #[test]
    fn test_retrieve_candidates_matches_index_recount() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = OfflineGenerator::new();
        let options = QueryOptions {
            top_k: 4,
            ..QueryOptions::default()
        };
        let engine = QueryEngine::new(&index, &generator, &embedder, options);

        let set = SubquerySet {
            original_query: "alphafox and betawolf".into(),
            background: String::new(),
            subqueries: vec!["alphafox records".into(), "betawolf records".into(), "gammabear".into()],
        };
        let candidates = engine.retrieve_candidates(&set).unwrap();

        let mut recount: HashMap<String, usize> = HashMap::new();
        let mut retrieved_total = 0usize;
        for subquery in &set.subqueries {
            let vector = embedder.embed(std::slice::from_ref(subquery)).unwrap().remove(0);
            for hit in index.search(&vector, 4).unwrap() {
                *recount.entry(hit.dataset_id).or_default() += 1;
                retrieved_total += 1;
            }
        }
        assert_eq!(candidates.len(), recount.len());
        for candidate in &candidates {
            assert_eq!(candidate.retrieval_score, recount[&candidate.dataset_id]);
            assert!(candidate.retrieval_score <= set.subqueries.len() * 4);
        }
        let total: usize = candidates.iter().map(|c| c.retrieval_score).sum();
        assert_eq!(total, retrieved_total);
    }

    #[test]
    fn test_parse_subqueries_strips_and_dedupes() {
        let parsed = parse_subqueries("1. rainfall data\n- rainfall   data\n2) soil moisture\n\n", 5);
        assert_eq!(parsed, vec!["rainfall data", "soil moisture"]);
    }

    #[test]
    fn test_parse_subqueries_clamps() {
        let output = (1..=12).map(|i| format!("query {i}")).collect::<Vec<_>>().join("\n");
        let parsed = parse_subqueries(&output, 5);
        assert_eq!(parsed.len(), 5);
        assert_eq!(parsed[4], "query 5");
    }

    #[test]
    fn test_expand_and_decompose_offline() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = OfflineGenerator::new();
        let engine = QueryEngine::new(&index, &generator, &embedder, QueryOptions::default());

        let (background, degraded) = engine.expand_query("diabetes datasets").unwrap();
        assert!(!degraded);
        assert!(background.contains("diabetes"));

        let (set, degraded) = engine.decompose_query("alphafox tables and betawolf stats", &background).unwrap();
        assert!(!degraded);
        assert_eq!(set.subqueries, vec!["alphafox tables", "betawolf stats"]);
    }

    #[test]
    fn test_expand_empty_query_is_error() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = OfflineGenerator::new();
        let engine = QueryEngine::new(&index, &generator, &embedder, QueryOptions::default());
        assert!(matches!(engine.expand_query("  "), Err(PipelineError::EmptyQuery)));
    }

    #[test]
    fn test_provider_outage_degrades_but_answers() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = FailingGenerator;
        let engine = QueryEngine::new(&index, &generator, &embedder, QueryOptions::default());

        let result = engine.search("q1", "alphafox measurements").unwrap();
        assert!(result.expansion_degraded);
        assert!(result.decompose_degraded);
        assert!(result.rerank_degraded);
        assert_eq!(result.subqueries.subqueries, vec!["alphafox measurements"]);
        assert!(!result.entries.is_empty());
        assert_eq!(result.ranked_ids()[0], "ds0");
    }

    #[test]
    fn test_search_planted_marker_ranks_first() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = OfflineGenerator::new();
        let engine = QueryEngine::new(&index, &generator, &embedder, QueryOptions::default());

        for (d, marker) in ["alphafox", "betawolf", "gammabear"].iter().enumerate() {
            let result = engine.search("q", &format!("{marker} data")).unwrap();
            assert_eq!(result.ranked_ids()[0], format!("ds{d}"), "marker {marker}");
        }
    }

    #[test]
    fn test_optimization_off_equals_identity_decomposition() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = OfflineGenerator::new();

        let on = QueryEngine::new(&index, &generator, &embedder, QueryOptions::default());
        let off = QueryEngine::new(
            &index,
            &generator,
            &embedder,
            QueryOptions {
                query_optimization: false,
                ..QueryOptions::default()
            },
        );

        // single-clause query: offline decomposition is the identity
        let query = "gammabear observations";
        let a = on.retrieve_candidates(&on.decompose_query(query, "").unwrap().0).unwrap();
        let b = off
            .retrieve_candidates(&SubquerySet {
                original_query: query.into(),
                background: String::new(),
                subqueries: vec![query.into()],
            })
            .unwrap();
        let ids_a: Vec<&str> = a.iter().map(|c| c.dataset_id.as_str()).collect();
        let ids_b: Vec<&str> = b.iter().map(|c| c.dataset_id.as_str()).collect();
        assert_eq!(ids_a, ids_b);
        let scores_a: Vec<usize> = a.iter().map(|c| c.retrieval_score).collect();
        let scores_b: Vec<usize> = b.iter().map(|c| c.retrieval_score).collect();
        assert_eq!(scores_a, scores_b);
    }

    #[test]
    fn test_rerank_off_keeps_retrieval_order() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = OfflineGenerator::new();
        let engine = QueryEngine::new(
            &index,
            &generator,
            &embedder,
            QueryOptions {
                rerank: false,
                ..QueryOptions::default()
            },
        );
        let result = engine.search("q", "alphafox and betawolf").unwrap();
        for entry in &result.entries {
            assert_eq!(entry.retrieval_rank, entry.final_rank);
        }
    }

    fn pool(n: usize) -> Vec<Candidate> {
        (0..n)
            .map(|i| Candidate {
                dataset_id: format!("ds{i}"),
                profile: None,
                retrieval_score: n - i,
                best_distance: 0.1 * i as f64,
                matched: vec![],
            })
            .collect()
    }

    fn engine_with<'a>(
        index: &'a VectorIndex,
        generator: &'a dyn TextGenerator,
        embedder: &'a HashEmbedder,
    ) -> QueryEngine<'a> {
        QueryEngine::new(index, generator, embedder, QueryOptions::default())
    }

    #[test]
    fn test_rerank_single_candidate_unchanged() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = ScriptedGenerator::rerank("whatever");
        let engine = engine_with(&index, &generator, &embedder);
        let (order, degraded) = engine.rerank("q", &pool(1));
        assert_eq!(order, vec![0]);
        assert!(!degraded);
    }

    #[test]
    fn test_rerank_reversed_output_reverses() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = ScriptedGenerator::rerank("ds3\nds2\nds1\nds0");
        let engine = engine_with(&index, &generator, &embedder);
        let (order, degraded) = engine.rerank("q", &pool(4));
        assert_eq!(order, vec![3, 2, 1, 0]);
        assert!(!degraded);
    }

    #[test]
    fn test_rerank_omitted_ids_appended_in_retrieval_order() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        // mentions only 2 of 5; ds4 and unknown junk must not break it
        let generator = ScriptedGenerator::rerank("ds2\nnonsense\nds0\nunknown99");
        let engine = engine_with(&index, &generator, &embedder);
        let (order, degraded) = engine.rerank("q", &pool(5));
        assert_eq!(order, vec![2, 0, 1, 3, 4]);
        assert!(!degraded);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn test_rerank_garbage_falls_back() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = ScriptedGenerator::rerank("I cannot rank these datasets.");
        let engine = engine_with(&index, &generator, &embedder);
        let (order, degraded) = engine.rerank("q", &pool(3));
        assert_eq!(order, vec![0, 1, 2]);
        assert!(degraded);
    }

    #[test]
    fn test_rerank_handles_punctuation_and_numbering() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = ScriptedGenerator::rerank("1. ds1,\n2. \"ds0\".\n");
        let engine = engine_with(&index, &generator, &embedder);
        let (order, degraded) = engine.rerank("q", &pool(2));
        assert_eq!(order, vec![1, 0]);
        assert!(!degraded);
    }

    #[test]
    fn test_search_deterministic_without_llm_stages() {
        let embedder = HashEmbedder::default();
        let index = marker_index(&embedder);
        let generator = OfflineGenerator::new();
        let options = QueryOptions {
            query_optimization: false,
            rerank: false,
            ..QueryOptions::default()
        };
        let engine = QueryEngine::new(&index, &generator, &embedder, options);
        let a = engine.search("q", "betawolf stats").unwrap();
        let b = engine.search("q", "betawolf stats").unwrap();
        let ra: Vec<(&str, usize)> = a.entries.iter().map(|e| (e.dataset_id.as_str(), e.final_rank)).collect();
        let rb: Vec<(&str, usize)> = b.entries.iter().map(|e| (e.dataset_id.as_str(), e.final_rank)).collect();
        assert_eq!(ra, rb);
    }

    #[test]
    fn test_empty_index_propagates() {
        let embedder = HashEmbedder::default();
        let index = VectorIndex::flat(embedder.dimension());
        let generator = OfflineGenerator::new();
        let engine = QueryEngine::new(&index, &generator, &embedder, QueryOptions::default());
        assert!(matches!(
            engine.search("q", "anything"),
            Err(PipelineError::Index(IndexError::EmptyIndex))
        ));
    }
}
