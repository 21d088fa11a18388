//! Retrieval evaluation: graded relevance judgments, run files, the standard
//! rank metrics, and bootstrap confidence intervals.
//!
//! Conventions, stated because published comparisons depend on them: nDCG
//! uses linear gain (gain(g) = g) with a log2(rank+1) discount and is
//! normalized by the ideal DCG over all judged items; binarization for
//! precision/recall/AP treats grade >= 1 as relevant; unjudged retrieved
//! documents count as non-relevant; queries without positive judgments are
//! skipped and reported, never averaged as zeros.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("bootstrap needs at least 2 per-query scores")]
    InsufficientData,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Graded relevance judgments: (query id, dataset id) -> grade >= 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, dataset_id: &str, grade: u32) {
        self.grades
            .entry(query_id.to_string())
            .or_default()
            .insert(dataset_id.to_string(), grade);
    }

    pub fn grades(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(query_id)
    }

    /// Dataset ids with grade >= 1.
    pub fn relevant(&self, query_id: &str) -> BTreeSet<&str> {
        self.grades
            .get(query_id)
            .map(|g| {
                g.iter()
                    .filter(|(_, &grade)| grade >= 1)
                    .map(|(id, _)| id.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.grades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }

    /// Parse the TREC qrels format: `<query_id> 0 <dataset_id> <grade>`,
    /// whitespace-separated, one judgment per line.
    pub fn from_path(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, EvalError> {
        let mut qrels = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(EvalError::Malformed {
                    path: source.to_string(),
                    line: lineno + 1,
                    reason: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let grade: u32 = fields[3].parse().map_err(|_| EvalError::Malformed {
                path: source.to_string(),
                line: lineno + 1,
                reason: format!("bad relevance grade {:?}", fields[3]),
            })?;
            if let Some(existing) = qrels.grades.get(fields[0]).and_then(|g| g.get(fields[2])) {
                return Err(EvalError::Malformed {
                    path: source.to_string(),
                    line: lineno + 1,
                    reason: format!(
                        "duplicate judgment for ({}, {}) (previous grade {existing})",
                        fields[0], fields[2]
                    ),
                });
            }
            qrels.insert(fields[0], fields[2], grade);
        }
        Ok(qrels)
    }
}

/// Ranked results per query. Rank order is authoritative; scores are carried
/// along for the run-file format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append the next-ranked dataset for a query. Callers must not push the
    /// same dataset twice for one query; the TREC parser rejects such files.
    pub fn push(&mut self, query_id: &str, dataset_id: &str, score: f64) {
        self.rankings
            .entry(query_id.to_string())
            .or_default()
            .push((dataset_id.to_string(), score));
    }

    pub fn ranking(&self, query_id: &str) -> Option<&[(String, f64)]> {
        self.rankings.get(query_id).map(Vec::as_slice)
    }

    pub fn ranked_ids(&self, query_id: &str) -> Vec<String> {
        self.rankings
            .get(query_id)
            .map(|r| r.iter().map(|(id, _)| id.clone()).collect())
            .unwrap_or_default()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.rankings.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    /// Parse the TREC run format:
    /// `<query_id> Q0 <dataset_id> <rank> <score> <tag>`. Entries are ordered
    /// by their rank field; duplicate (query, dataset) pairs are an error.
    pub fn from_path(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, EvalError> {
        let mut per_query: BTreeMap<String, Vec<(u64, String, f64)>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(EvalError::Malformed {
                    path: source.to_string(),
                    line: lineno + 1,
                    reason: format!("expected 6 fields, got {}", fields.len()),
                });
            }
            let rank: u64 = fields[3].parse().map_err(|_| EvalError::Malformed {
                path: source.to_string(),
                line: lineno + 1,
                reason: format!("bad rank {:?}", fields[3]),
            })?;
            let score: f64 = fields[4].parse().map_err(|_| EvalError::Malformed {
                path: source.to_string(),
                line: lineno + 1,
                reason: format!("bad score {:?}", fields[4]),
            })?;
            let entries = per_query.entry(fields[0].to_string()).or_default();
            if entries.iter().any(|(_, id, _)| id == fields[2]) {
                return Err(EvalError::Malformed {
                    path: source.to_string(),
                    line: lineno + 1,
                    reason: format!("duplicate dataset {} for query {}", fields[2], fields[0]),
                });
            }
            entries.push((rank, fields[2].to_string(), score));
        }
        let mut run = Self::new();
        for (query_id, mut entries) in per_query {
            entries.sort_by_key(|a| a.0);
            run.rankings.insert(
                query_id,
                entries.into_iter().map(|(_, id, score)| (id, score)).collect(),
            );
        }
        Ok(run)
    }

    /// Serialize in the TREC run format with rank = list position.
    pub fn to_text(&self, tag: &str) -> String {
        let mut out = String::new();
        for (query_id, entries) in &self.rankings {
            for (rank, (dataset_id, score)) in entries.iter().enumerate() {
                let _ = writeln!(out, "{query_id} Q0 {dataset_id} {} {score} {tag}", rank + 1);
            }
        }
        out
    }

    pub fn write(&self, path: &Path, tag: &str) -> Result<(), EvalError> {
        fs::write(path, self.to_text(tag))?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Metric primitives
// ---------------------------------------------------------------------------

/// |relevant ∩ top-k| / |relevant|. Caller guarantees `relevant` non-empty.
pub fn recall_at_k(ranking: &[String], relevant: &BTreeSet<&str>, k: usize) -> f64 {
    debug_assert!(!relevant.is_empty());
    let hits = ranking
        .iter()
        .take(k)
        .filter(|id| relevant.contains(id.as_str()))
        .count();
    hits as f64 / relevant.len() as f64
}

/// |relevant ∩ top-k| / k.
pub fn precision_at_k(ranking: &[String], relevant: &BTreeSet<&str>, k: usize) -> f64 {
    debug_assert!(k >= 1);
    let hits = ranking
        .iter()
        .take(k)
        .filter(|id| relevant.contains(id.as_str()))
        .count();
    hits as f64 / k as f64
}

/// Average precision over the full ranking, normalized by |relevant|.
pub fn average_precision(ranking: &[String], relevant: &BTreeSet<&str>) -> f64 {
    debug_assert!(!relevant.is_empty());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranking.iter().enumerate() {
        if relevant.contains(id.as_str()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

/// nDCG@k with linear gain: DCG = Σ_{r=1..k} grade_r / log2(r + 1),
/// normalized by the ideal DCG over all judged items.
pub fn ndcg_at_k(ranking: &[String], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| {
            let gain = grades.get(id).copied().unwrap_or(0) as f64;
            gain / ((i + 2) as f64).log2()
        })
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| g as f64 / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

// ---------------------------------------------------------------------------
// Per-run evaluation
// ---------------------------------------------------------------------------

/// Scores for one evaluated query at the standard cutoffs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScores {
    pub ap: f64,
    pub p10: f64,
    pub ndcg10: f64,
    pub recall1: f64,
    pub recall5: f64,
    pub recall10: f64,
}

/// Evaluation outcome: per-query scores plus skip diagnostics.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub per_query: BTreeMap<String, QueryScores>,
    /// (query id, reason) for queries that could not be scored.
    pub skipped: Vec<(String, String)>,
}

impl EvalReport {
    pub fn evaluated(&self) -> usize {
        self.per_query.len()
    }

    pub fn mean(&self, f: impl Fn(&QueryScores) -> f64) -> f64 {
        if self.per_query.is_empty() {
            return 0.0;
        }
        self.per_query.values().map(f).sum::<f64>() / self.per_query.len() as f64
    }

    pub fn map(&self) -> f64 {
        self.mean(|s| s.ap)
    }

    pub fn mean_p10(&self) -> f64 {
        self.mean(|s| s.p10)
    }

    pub fn mean_ndcg10(&self) -> f64 {
        self.mean(|s| s.ndcg10)
    }

    /// Mean recall at one of the tracked cutoffs (1, 5, or 10); other
    /// cutoffs panic.
    pub fn mean_recall(&self, k: usize) -> f64 {
        match k {
            1 => self.mean(|s| s.recall1),
            5 => self.mean(|s| s.recall5),
            10 => self.mean(|s| s.recall10),
            _ => panic!("recall cutoff {k} not tracked"),
        }
    }

    pub fn scores_of(&self, f: impl Fn(&QueryScores) -> f64) -> Vec<f64> {
        self.per_query.values().map(f).collect()
    }
}

/// Score every query in the run against the judgments. Queries missing from
/// the qrels, or judged entirely non-relevant, are skipped with a diagnostic;
/// so are judged queries the run never answered.
pub fn evaluate(run: &RunFile, qrels: &Qrels) -> EvalReport {
    let mut report = EvalReport::default();
    for query_id in run.query_ids() {
        let Some(grades) = qrels.grades(query_id) else {
            report
                .skipped
                .push((query_id.to_string(), "query not present in qrels".into()));
            continue;
        };
        let relevant = qrels.relevant(query_id);
        if relevant.is_empty() {
            report
                .skipped
                .push((query_id.to_string(), "no relevant judgments".into()));
            continue;
        }
        let ranking = run.ranked_ids(query_id);
        report.per_query.insert(
            query_id.to_string(),
            QueryScores {
                ap: average_precision(&ranking, &relevant),
                p10: precision_at_k(&ranking, &relevant, 10),
                ndcg10: ndcg_at_k(&ranking, grades, 10),
                recall1: recall_at_k(&ranking, &relevant, 1),
                recall5: recall_at_k(&ranking, &relevant, 5),
                recall10: recall_at_k(&ranking, &relevant, 10),
            },
        );
    }
    for query_id in qrels.query_ids() {
        if run.ranking(query_id).is_none() {
            report
                .skipped
                .push((query_id.to_string(), "query not present in run".into()));
        }
    }
    report.skipped.sort();
    report
}

// ---------------------------------------------------------------------------
// Bootstrap confidence intervals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCi {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
    pub confidence: f64,
    pub resamples: usize,
}

/// Percentile bootstrap over query-level resampling with replacement.
/// Deterministic for a fixed seed.
pub fn bootstrap_ci(
    per_query_scores: &[f64],
    confidence: f64,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapCi, EvalError> {
    if per_query_scores.len() < 2 {
        return Err(EvalError::InsufficientData);
    }
    let n = per_query_scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let sum: f64 = (0..n).map(|_| per_query_scores[rng.gen_range(0..n)]).sum();
        means.push(sum / n as f64);
    }
    means.sort_by(|a, b| a.total_cmp(b));
    let percentile = |p: f64| -> f64 {
        let rank = (p * means.len() as f64).ceil().max(1.0) as usize;
        means[rank.min(means.len()) - 1]
    };
    Ok(BootstrapCi {
        mean: per_query_scores.iter().sum::<f64>() / n as f64,
        low: percentile((1.0 - confidence) / 2.0),
        high: percentile((1.0 + confidence) / 2.0),
        confidence,
        resamples,
    })
}
