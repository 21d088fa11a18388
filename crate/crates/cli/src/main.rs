use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use tabseek_cli::config::{BackendKind, PipelineConfig};
use tabseek_cli::{cmd_eval, cmd_index, cmd_profile, cmd_query, CliError, EvalArgs};

/// Content-based search over collections of tabular datasets.
///
/// The offline phase (`index`) profiles every table, generates pseudoqueries
/// from the profiles, embeds them, and writes a vector index. The online
/// phase (`query`, `eval`) optimizes free-form queries into subqueries,
/// retrieves and aggregates pseudoquery matches per dataset, and reranks the
/// candidates against the original query.
#[derive(Parser)]
#[command(name = "tabseek", version, max_term_width = 100)]
struct Cli {
    /// TOML configuration file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log filter directives for diagnostics on stderr (e.g. "info",
    /// "provider=debug").
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the statistical profile of every table in the corpus.
    Profile {
        /// Corpus directory of delimited text files.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Manifest file (id, relative path, display name; tab-separated).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also write one JSON record per column to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the pseudoquery index (offline phase).
    Index {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Index file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pseudoqueries generated per dataset.
        #[arg(long, short = 't')]
        pseudoqueries: Option<usize>,
        /// Nearest-neighbor backend.
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        /// HNSW connectivity (max links per node above layer 0).
        #[arg(long)]
        hnsw_m: Option<usize>,
        /// HNSW construction beam width.
        #[arg(long)]
        hnsw_ef_construction: Option<usize>,
        /// HNSW search beam width.
        #[arg(long)]
        hnsw_ef_search: Option<usize>,
        /// Seed for randomized structures (HNSW level draws).
        #[arg(long)]
        seed: Option<u64>,
        /// Keep the index even if some datasets failed.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Run one query against an index (online phase).
    Query {
        /// The natural-language query.
        query: String,
        /// Index file to search.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Query id used in TREC output.
        #[arg(long, default_value = "q1")]
        query_id: String,
        /// Pseudoqueries retrieved per subquery.
        #[arg(long, short = 'k')]
        k: Option<usize>,
        /// Candidate pool size.
        #[arg(long)]
        pool: Option<usize>,
        /// Maximum number of subqueries.
        #[arg(long)]
        max_subqueries: Option<usize>,
        /// Disable query optimization (expansion + decomposition).
        #[arg(long)]
        no_query_opt: bool,
        /// Disable listwise reranking.
        #[arg(long)]
        no_rerank: bool,
        /// Emit TREC run lines instead of the readable listing.
        #[arg(long)]
        trec: bool,
    },
    /// Evaluate a batch of queries against relevance judgments.
    Eval {
        /// Queries file: one `<query_id>\t<query text>` per line.
        #[arg(long)]
        queries: PathBuf,
        /// Qrels file: `<query_id> 0 <dataset_id> <grade>` per line.
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        /// Write the run in TREC format to this file.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Write the metric report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also evaluate with query optimization disabled, as a second column.
        #[arg(long)]
        ablate_query_opt: bool,
        /// Print bootstrap 95% confidence intervals.
        #[arg(long)]
        ci: bool,
        #[arg(long, default_value_t = 10_000)]
        ci_resamples: usize,
        /// Bootstrap seed (defaults to the config seed).
        #[arg(long)]
        ci_seed: Option<u64>,
        /// Print per-query scores.
        #[arg(long)]
        per_query: bool,
        /// Run the query batch in parallel (identical output, less wall time).
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        no_query_opt: bool,
        #[arg(long)]
        no_rerank: bool,
        /// Pseudoqueries retrieved per subquery.
        #[arg(long, short = 'k')]
        k: Option<usize>,
        /// Candidate pool size.
        #[arg(long)]
        pool: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are success, everything else is usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_path(path).map_err(CliError::Usage)?,
        None => PipelineConfig::default(),
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();

    match cli.command {
        Command::Profile { corpus, manifest, out: json_out } => {
            apply_paths(&mut config, corpus, manifest, None);
            cmd_profile(&config, json_out.as_deref(), &mut out)
        }
        Command::Index {
            corpus,
            manifest,
            out: index_out,
            pseudoqueries,
            backend,
            hnsw_m,
            hnsw_ef_construction,
            hnsw_ef_search,
            seed,
            allow_partial,
        } => {
            apply_paths(&mut config, corpus, manifest, index_out);
            if let Some(t) = pseudoqueries {
                config.indexing.pseudoqueries_per_dataset = t;
            }
            if let Some(backend) = backend {
                config.indexing.backend = backend;
            }
            if let Some(m) = hnsw_m {
                config.indexing.hnsw_m = m;
            }
            if let Some(ef) = hnsw_ef_construction {
                config.indexing.hnsw_ef_construction = ef;
            }
            if let Some(ef) = hnsw_ef_search {
                config.indexing.hnsw_ef_search = ef;
            }
            if let Some(seed) = seed {
                config.seed = seed;
            }
            config.validate().map_err(CliError::Usage)?;
            cmd_index(&config, allow_partial, &mut out).map(|_| ())
        }
        Command::Query {
            query,
            index,
            query_id,
            k,
            pool,
            max_subqueries,
            no_query_opt,
            no_rerank,
            trec,
        } => {
            apply_paths(&mut config, None, None, index);
            apply_online(&mut config, k, pool, max_subqueries, no_query_opt, no_rerank);
            config.validate().map_err(CliError::Usage)?;
            cmd_query(&config, &query_id, &query, trec, &mut out).map(|_| ())
        }
        Command::Eval {
            queries,
            qrels,
            index,
            run,
            report,
            ablate_query_opt,
            ci,
            ci_resamples,
            ci_seed,
            per_query,
            parallel,
            no_query_opt,
            no_rerank,
            k,
            pool,
        } => {
            apply_paths(&mut config, None, None, index);
            apply_online(&mut config, k, pool, None, no_query_opt, no_rerank);
            config.validate().map_err(CliError::Usage)?;
            let args = EvalArgs {
                queries_path: queries,
                qrels_path: qrels,
                run_out: run,
                report_out: report,
                ci,
                ci_resamples,
                ci_seed,
                ablate_query_opt,
                per_query,
                parallel,
            };
            cmd_eval(&config, &args, &mut out).map(|_| ())
        }
    }
}

fn apply_paths(
    config: &mut PipelineConfig,
    corpus: Option<PathBuf>,
    manifest: Option<PathBuf>,
    index: Option<PathBuf>,
) {
    if let Some(corpus) = corpus {
        config.corpus = Some(corpus);
    }
    if let Some(manifest) = manifest {
        config.manifest = Some(manifest);
    }
    if let Some(index) = index {
        config.index_path = index;
    }
}

fn apply_online(
    config: &mut PipelineConfig,
    k: Option<usize>,
    pool: Option<usize>,
    max_subqueries: Option<usize>,
    no_query_opt: bool,
    no_rerank: bool,
) {
    if let Some(k) = k {
        config.online.top_k = k;
    }
    if let Some(pool) = pool {
        config.online.pool_size = pool;
    }
    if let Some(n) = max_subqueries {
        config.online.max_subqueries = n;
    }
    if no_query_opt {
        config.online.query_optimization = false;
    }
    if no_rerank {
        config.online.rerank = false;
    }
}
