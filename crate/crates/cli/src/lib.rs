//! Command implementations behind the `tabseek` binary: corpus profiling,
//! offline index builds, single queries, and batch evaluation.
//!
//! Everything here writes its user-facing output to a caller-supplied writer
//! so commands are testable without capturing stdout; `main` passes stdout.
//! Timing and provider chatter go to the tracing subscriber (stderr), never
//! into report files, which keeps reports byte-reproducible.

pub mod config;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use tabseek_core::build::{build_index_with, BuildError, BuildReport};
use tabseek_core::corpus::load_collection;
use tabseek_core::eval::{bootstrap_ci, evaluate, EvalReport, Qrels, RunFile};
use tabseek_core::index::{HnswParams, VectorIndex};
use tabseek_core::pipeline::{QueryEngine, QueryOptions, RankedResult};
use tabseek_core::profile::profile_dataset_with;
use tabseek_core::provider::{
    CachedEmbedder, EmbeddingCache, HashEmbedder, OfflineGenerator, RemoteConfig, RemoteEmbedder,
    RemoteGenerator, TextEmbedder, TextGenerator,
};

use config::{PipelineConfig, ProviderMode};

/// Errors classified by exit code: usage 1, data 2, provider 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Provider(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Provider(m) => write!(f, "provider error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Build the generator for the configured provider mode.
pub fn make_generator(config: &PipelineConfig) -> Result<Box<dyn TextGenerator>, CliError> {
    match config.provider.mode {
        ProviderMode::Offline => Ok(Box::new(OfflineGenerator::new())),
        ProviderMode::Remote => Ok(Box::new(RemoteGenerator::new(remote_config(config)?))),
    }
}

/// Build the embedder for the configured provider mode at a fixed dimension.
pub fn make_embedder(
    config: &PipelineConfig,
    dimension: usize,
) -> Result<Box<dyn TextEmbedder>, CliError> {
    match config.provider.mode {
        ProviderMode::Offline => Ok(Box::new(HashEmbedder::new(dimension))),
        ProviderMode::Remote => Ok(Box::new(RemoteEmbedder::new(remote_config(config)?, dimension))),
    }
}

fn remote_config(config: &PipelineConfig) -> Result<RemoteConfig, CliError> {
    let endpoint = config.remote_endpoint().ok_or_else(|| {
        CliError::Usage("remote provider selected but no endpoint configured".into())
    })?;
    let mut remote = RemoteConfig::new(endpoint);
    remote.api_key = config.remote_api_key();
    remote.max_in_flight = config.provider.concurrency;
    remote.attempts = config.provider.attempts;
    Ok(remote)
}

fn corpus_dir(config: &PipelineConfig) -> Result<&Path, CliError> {
    config
        .corpus
        .as_deref()
        .ok_or_else(|| CliError::Usage("no corpus directory configured (corpus = \"...\")".into()))
}

fn missing_token_refs(config: &PipelineConfig) -> Vec<&str> {
    config.missing_tokens.iter().map(String::as_str).collect()
}

pub fn query_options(config: &PipelineConfig) -> QueryOptions {
    QueryOptions {
        top_k: config.online.top_k,
        pool_size: config.online.pool_size,
        max_subqueries: config.online.max_subqueries,
        query_optimization: config.online.query_optimization,
        rerank: config.online.rerank,
        background_word_cap: config.online.background_word_cap,
        profile_word_budget: config.online.profile_word_budget,
    }
}

/// `profile`: render every table's statistical profile to the writer and
/// optionally dump one JSON record per column to `out`.
pub fn cmd_profile(
    config: &PipelineConfig,
    out: Option<&Path>,
    writer: &mut dyn Write,
) -> Result<(), CliError> {
    let collection =
        load_collection(corpus_dir(config)?, config.manifest.as_deref()).map_err(data_err)?;
    let tokens = missing_token_refs(config);
    let mut jsonl = String::new();
    for table in &collection.tables {
        let profile = profile_dataset_with(table, &tokens).map_err(data_err)?;
        writeln!(writer, "# dataset: {}", profile.dataset_id).map_err(data_err)?;
        writeln!(writer, "{}", profile.rendered_text).map_err(data_err)?;
        if out.is_some() {
            for column in &profile.column_profiles {
                let record = serde_json::json!({
                    "dataset_id": profile.dataset_id,
                    "row_count": profile.row_count,
                    "column": column,
                });
                jsonl.push_str(&record.to_string());
                jsonl.push('\n');
            }
        }
    }
    for diag in &collection.report.skipped {
        writeln!(writer, "# skipped {}: {}", diag.path, diag.reason).map_err(data_err)?;
    }
    if let Some(path) = out {
        std::fs::write(path, jsonl).map_err(data_err)?;
    }
    Ok(())
}

/// `index`: run the offline phase and save the index file.
pub fn cmd_index(
    config: &PipelineConfig,
    allow_partial: bool,
    writer: &mut dyn Write,
) -> Result<BuildReport, CliError> {
    let collection =
        load_collection(corpus_dir(config)?, config.manifest.as_deref()).map_err(data_err)?;
    let generator = make_generator(config)?;
    let embedder = make_embedder(config, config.indexing.embedding_dimension)?;
    for path in [&config.index_path, &config.cache_path()] {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(data_err)?;
        }
    }
    let cache = EmbeddingCache::open(&config.cache_path()).map_err(data_err)?;
    let cached = CachedEmbedder::new(embedder.as_ref(), &cache);

    let mut index = match config.indexing.backend {
        config::BackendKind::Flat => VectorIndex::flat(config.indexing.embedding_dimension),
        config::BackendKind::Hnsw => VectorIndex::hnsw(
            config.indexing.embedding_dimension,
            HnswParams {
                m: config.indexing.hnsw_m,
                ef_construction: config.indexing.hnsw_ef_construction,
                ef_search: config.indexing.hnsw_ef_search,
            },
            config.seed,
        ),
    };

    let tokens = missing_token_refs(config);
    let report = build_index_with(
        &mut index,
        &collection,
        generator.as_ref(),
        &cached,
        config.indexing.pseudoqueries_per_dataset,
        allow_partial,
        &tokens,
    )
    .map_err(|e| match e {
        BuildError::Index(inner) => CliError::Data(inner.to_string()),
        other => CliError::Provider(other.to_string()),
    })?;

    index.save(&config.index_path).map_err(data_err)?;

    writeln!(
        writer,
        "indexed {} datasets ({} pseudoqueries) -> {}",
        report.datasets_indexed,
        report.records_inserted,
        config.index_path.display()
    )
    .map_err(data_err)?;
    writeln!(writer, "embedding cache: {} entries ({} new)", cache.len(), cached.misses())
        .map_err(data_err)?;
    for outcome in &report.outcomes {
        match &outcome.error {
            None => writeln!(writer, "  {}: {} pseudoqueries", outcome.dataset_id, outcome.pseudoqueries),
            Some(reason) => writeln!(writer, "  {}: FAILED ({reason})", outcome.dataset_id),
        }
        .map_err(data_err)?;
    }
    for diag in &collection.report.skipped {
        writeln!(writer, "  skipped {}: {}", diag.path, diag.reason).map_err(data_err)?;
    }
    Ok(report)
}

fn load_index(config: &PipelineConfig) -> Result<VectorIndex, CliError> {
    if !config.index_path.exists() {
        return Err(CliError::Data(format!(
            "index file {} does not exist; run `tabseek index` first",
            config.index_path.display()
        )));
    }
    VectorIndex::load(&config.index_path).map_err(data_err)
}

/// `query`: run one query through the online phase.
pub fn cmd_query(
    config: &PipelineConfig,
    query_id: &str,
    query: &str,
    trec: bool,
    writer: &mut dyn Write,
) -> Result<RankedResult, CliError> {
    let index = load_index(config)?;
    let generator = make_generator(config)?;
    let embedder = make_embedder(config, index.dimension())?;
    let engine = QueryEngine::new(&index, generator.as_ref(), embedder.as_ref(), query_options(config));
    let result = engine.search(query_id, query).map_err(provider_or_data)?;

    if trec {
        write!(writer, "{}", trec_lines(&result)).map_err(data_err)?;
    } else {
        render_result(&result, writer)?;
    }
    Ok(result)
}

fn provider_or_data(e: tabseek_core::pipeline::PipelineError) -> CliError {
    use tabseek_core::pipeline::PipelineError;
    match e {
        PipelineError::Provider(inner) => CliError::Provider(inner.to_string()),
        PipelineError::EmptyQuery => CliError::Usage(e.to_string()),
        PipelineError::Index(inner) => CliError::Data(inner.to_string()),
    }
}

fn trec_lines(result: &RankedResult) -> String {
    let mut run = RunFile::new();
    push_result(&mut run, result);
    run.to_text("tabseek")
}

/// Run-file score: descending with rank so rank order survives tools that
/// re-sort by score.
fn push_result(run: &mut RunFile, result: &RankedResult) {
    let n = result.entries.len();
    for (i, id) in result.ranked_ids().iter().enumerate() {
        run.push(&result.query_id, id, (n - i) as f64);
    }
}

fn render_result(result: &RankedResult, writer: &mut dyn Write) -> Result<(), CliError> {
    writeln!(writer, "query: {}", result.subqueries.original_query).map_err(data_err)?;
    if !result.subqueries.background.is_empty() {
        let preview: String = result.subqueries.background.chars().take(120).collect();
        writeln!(writer, "background: {preview}").map_err(data_err)?;
    }
    writeln!(writer, "subqueries ({}):", result.subqueries.subqueries.len()).map_err(data_err)?;
    for (i, subquery) in result.subqueries.subqueries.iter().enumerate() {
        writeln!(writer, "  {}. {subquery}", i + 1).map_err(data_err)?;
    }
    let degradations = [
        (result.expansion_degraded, "expansion degraded: no background document"),
        (result.decompose_degraded, "decomposition degraded: used the raw query"),
        (result.rerank_degraded, "rerank degraded: kept retrieval order"),
    ];
    for (_, message) in degradations.iter().filter(|(on, _)| *on) {
        writeln!(writer, "warning: {message}").map_err(data_err)?;
    }
    writeln!(writer, "results:").map_err(data_err)?;
    let mut entries: Vec<_> = result.entries.iter().collect();
    entries.sort_by_key(|e| e.final_rank);
    for entry in entries {
        writeln!(
            writer,
            "  {:>3}. {}  score={} best_distance={:.6} retrieval_rank={}",
            entry.final_rank,
            entry.dataset_id,
            entry.retrieval_score,
            entry.best_distance,
            entry.retrieval_rank
        )
        .map_err(data_err)?;
    }
    Ok(())
}

/// Arguments for `eval` beyond the shared config.
pub struct EvalArgs {
    pub queries_path: PathBuf,
    pub qrels_path: PathBuf,
    pub run_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub ci: bool,
    pub ci_resamples: usize,
    pub ci_seed: Option<u64>,
    pub ablate_query_opt: bool,
    pub per_query: bool,
    /// Run the query batch across threads. Results are collected in query
    /// order, so the run and report are identical either way.
    pub parallel: bool,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub full: EvalReport,
    pub ablated: Option<EvalReport>,
    pub report_text: String,
}

/// `eval`: run every query through search, score the run against qrels, and
/// render a metric table (optionally paired with the no-query-optimization
/// ablation, per-query breakdowns, and bootstrap confidence intervals).
pub fn cmd_eval(
    config: &PipelineConfig,
    args: &EvalArgs,
    writer: &mut dyn Write,
) -> Result<EvalOutcome, CliError> {
    let index = load_index(config)?;
    let generator = make_generator(config)?;
    let embedder = make_embedder(config, index.dimension())?;
    let queries = read_queries(&args.queries_path)?;
    if queries.is_empty() {
        return Err(CliError::Data(format!(
            "queries file {} contains no queries",
            args.queries_path.display()
        )));
    }
    let qrels = Qrels::from_path(&args.qrels_path).map_err(data_err)?;

    let run_batch = |options: QueryOptions| -> Result<RunFile, CliError> {
        let engine = QueryEngine::new(&index, generator.as_ref(), embedder.as_ref(), options);
        let results: Vec<Result<tabseek_core::pipeline::RankedResult, CliError>> =
            if args.parallel {
                use rayon::prelude::*;
                queries
                    .par_iter()
                    .map(|(query_id, text)| {
                        engine.search(query_id, text).map_err(provider_or_data)
                    })
                    .collect()
            } else {
                queries
                    .iter()
                    .map(|(query_id, text)| {
                        engine.search(query_id, text).map_err(provider_or_data)
                    })
                    .collect()
            };
        let mut run = RunFile::new();
        for result in results {
            push_result(&mut run, &result?);
        }
        Ok(run)
    };

    let full_run = run_batch(query_options(config))?;
    let full = evaluate(&full_run, &qrels);

    let ablated = if args.ablate_query_opt {
        let options = QueryOptions {
            query_optimization: false,
            ..query_options(config)
        };
        let run = run_batch(options)?;
        Some(evaluate(&run, &qrels))
    } else {
        None
    };

    if full.evaluated() == 0 {
        return Err(CliError::Data(
            "no query could be evaluated (no overlap between run and qrels)".into(),
        ));
    }

    // the run always lands on disk: explicit path or `<queries>.run`
    let run_path = args.run_out.clone().unwrap_or_else(|| {
        let mut p = args.queries_path.clone().into_os_string();
        p.push(".run");
        PathBuf::from(p)
    });
    full_run.write(&run_path, "tabseek").map_err(data_err)?;

    let report_text = render_eval_report(config, args, &full, ablated.as_ref())?;
    writer.write_all(report_text.as_bytes()).map_err(data_err)?;
    if let Some(path) = &args.report_out {
        std::fs::write(path, &report_text).map_err(data_err)?;
    }

    Ok(EvalOutcome {
        full,
        ablated,
        report_text,
    })
}

type MetricAccessor = fn(&tabseek_core::eval::QueryScores) -> f64;

const METRICS: &[(&str, MetricAccessor)] = &[
    ("MAP", |s| s.ap),
    ("P@10", |s| s.p10),
    ("R@10", |s| s.recall10),
    ("nDCG@10", |s| s.ndcg10),
    ("Recall@1", |s| s.recall1),
    ("Recall@5", |s| s.recall5),
    ("Recall@10", |s| s.recall10),
];

fn render_eval_report(
    config: &PipelineConfig,
    args: &EvalArgs,
    full: &EvalReport,
    ablated: Option<&EvalReport>,
) -> Result<String, CliError> {
    let mut out = String::new();
    let _ = writeln!(out, "evaluated queries: {} (skipped: {})", full.evaluated(), full.skipped.len());
    match ablated {
        None => {
            let _ = writeln!(out, "{:<10} {:>8}", "metric", "value");
            for (name, f) in METRICS {
                let _ = writeln!(out, "{name:<10} {:>8.4}", full.mean(f));
            }
        }
        Some(ablated) => {
            let _ = writeln!(out, "{:<10} {:>8} {:>14}", "metric", "full", "w/o query opt");
            for (name, f) in METRICS {
                let _ = writeln!(
                    out,
                    "{name:<10} {:>8.4} {:>14.4}",
                    full.mean(f),
                    ablated.mean(f)
                );
            }
        }
    }
    if args.ci {
        let seed = args.ci_seed.unwrap_or(config.seed);
        let _ = writeln!(out, "bootstrap 95% confidence intervals ({} resamples, seed {seed}):", args.ci_resamples);
        for (name, f) in METRICS {
            let scores = full.scores_of(f);
            match bootstrap_ci(&scores, 0.95, args.ci_resamples, seed) {
                Ok(ci) => {
                    let _ = writeln!(out, "{name:<10} mean {:.4} [{:.4}, {:.4}]", ci.mean, ci.low, ci.high);
                }
                Err(e) => {
                    let _ = writeln!(out, "{name:<10} unavailable: {e}");
                }
            }
        }
    }
    if args.per_query {
        let _ = writeln!(out, "per-query scores:");
        for (query_id, s) in &full.per_query {
            let _ = writeln!(
                out,
                "  {query_id} ap={:.4} p10={:.4} ndcg10={:.4} r1={:.4} r5={:.4} r10={:.4}",
                s.ap, s.p10, s.ndcg10, s.recall1, s.recall5, s.recall10
            );
        }
    }
    for (query_id, reason) in &full.skipped {
        let _ = writeln!(out, "skipped {query_id}: {reason}");
    }
    Ok(out)
}

/// Read a queries file of `<query_id>\t<query text>` lines.
pub fn read_queries(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read queries file {}: {e}", path.display())))?;
    let mut queries = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, query)) = line.split_once('\t') else {
            return Err(CliError::Data(format!(
                "{}:{}: expected <query_id>\\t<query text>",
                path.display(),
                lineno + 1
            )));
        };
        let id = id.trim();
        if id.is_empty() || query.trim().is_empty() {
            return Err(CliError::Data(format!(
                "{}:{}: empty query id or text",
                path.display(),
                lineno + 1
            )));
        }
        if !seen.insert(id.to_string()) {
            return Err(CliError::Data(format!(
                "{}:{}: duplicate query id {id:?}",
                path.display(),
                lineno + 1
            )));
        }
        queries.push((id.to_string(), query.trim().to_string()));
    }
    Ok(queries)
}
