//! Declarative pipeline configuration.
//!
//! A single TOML file drives both phases; every knob has a default and
//! unknown keys are rejected. Command-line flags override file values, and
//! the remote API key/endpoint can come from the environment
//! (`TABSEEK_API_KEY`, `TABSEEK_API_URL`) so secrets stay out of config
//! files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const ENV_API_URL: &str = "TABSEEK_API_URL";
pub const ENV_API_KEY: &str = "TABSEEK_API_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Corpus directory of delimited files.
    pub corpus: Option<PathBuf>,
    /// Optional manifest (`<id>\t<relative-path>\t<display-name>` lines).
    pub manifest: Option<PathBuf>,
    /// Index file written by `index` and read by `query`/`eval`.
    pub index_path: PathBuf,
    /// Embedding cache location; defaults to `<index_path>.cache`.
    pub cache_path: Option<PathBuf>,
    /// Cell texts treated as missing values, compared case-insensitively.
    pub missing_tokens: Vec<String>,
    /// Master seed for everything randomized (HNSW levels, bootstrap).
    pub seed: u64,
    pub provider: ProviderConfig,
    pub indexing: IndexingConfig,
    pub online: OnlineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            manifest: None,
            index_path: PathBuf::from("index.tsk"),
            cache_path: None,
            missing_tokens: tabseek_core::corpus::DEFAULT_MISSING_TOKENS
                .iter()
                .map(|t| t.to_string())
                .collect(),
            seed: 42,
            provider: ProviderConfig::default(),
            indexing: IndexingConfig::default(),
            online: OnlineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Offline,
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    /// Remote endpoint base URL; `TABSEEK_API_URL` is the fallback.
    pub endpoint: Option<String>,
    /// Remote API key; `TABSEEK_API_KEY` takes precedence.
    pub api_key: Option<String>,
    /// Bound on concurrent in-flight remote requests.
    pub concurrency: usize,
    /// Retry attempts for transient remote failures.
    pub attempts: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Offline,
            endpoint: None,
            api_key: None,
            concurrency: 8,
            attempts: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexingConfig {
    /// T: pseudoqueries generated per dataset.
    pub pseudoqueries_per_dataset: usize,
    pub embedding_dimension: usize,
    pub backend: BackendKind,
    pub hnsw_m: usize,
    pub hnsw_ef_construction: usize,
    pub hnsw_ef_search: usize,
}

impl Default for IndexingConfig {
    fn default() -> Self {
        Self {
            pseudoqueries_per_dataset: 10,
            embedding_dimension: 256,
            backend: BackendKind::Hnsw,
            hnsw_m: 16,
            hnsw_ef_construction: 200,
            hnsw_ef_search: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Flat,
    Hnsw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineConfig {
    /// K: pseudoqueries retrieved per subquery.
    pub top_k: usize,
    /// C: candidate pool size passed to the reranker.
    pub pool_size: usize,
    /// N_max: upper bound on subqueries per query.
    pub max_subqueries: usize,
    pub query_optimization: bool,
    pub rerank: bool,
    pub background_word_cap: usize,
    pub profile_word_budget: usize,
}

impl Default for OnlineConfig {
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

impl PipelineConfig {
    pub fn from_path(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let config: Self =
            toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        fn positive(name: &str, value: usize) -> Result<(), String> {
            if value == 0 {
                Err(format!("{name} must be at least 1"))
            } else {
                Ok(())
            }
        }
        positive("indexing.pseudoqueries_per_dataset", self.indexing.pseudoqueries_per_dataset)?;
        positive("indexing.embedding_dimension", self.indexing.embedding_dimension)?;
        positive("indexing.hnsw_m", self.indexing.hnsw_m)?;
        positive("indexing.hnsw_ef_construction", self.indexing.hnsw_ef_construction)?;
        positive("indexing.hnsw_ef_search", self.indexing.hnsw_ef_search)?;
        positive("online.top_k", self.online.top_k)?;
        positive("online.pool_size", self.online.pool_size)?;
        positive("online.max_subqueries", self.online.max_subqueries)?;
        positive("provider.concurrency", self.provider.concurrency)?;
        positive("provider.attempts", self.provider.attempts)?;
        if self.provider.mode == ProviderMode::Remote
            && self.provider.endpoint.is_none()
            && std::env::var(ENV_API_URL).is_err()
        {
            return Err(format!(
                "provider.mode is \"remote\" but no endpoint is set (provider.endpoint or {ENV_API_URL})"
            ));
        }
        Ok(())
    }

    /// Cache file location: explicit setting or `<index_path>.cache`.
    pub fn cache_path(&self) -> PathBuf {
        self.cache_path.clone().unwrap_or_else(|| {
            let mut p = self.index_path.clone().into_os_string();
            p.push(".cache");
            PathBuf::from(p)
        })
    }

    /// Endpoint resolution: config first, environment fallback.
    pub fn remote_endpoint(&self) -> Option<String> {
        self.provider
            .endpoint
            .clone()
            .or_else(|| std::env::var(ENV_API_URL).ok())
    }

    /// API key resolution: environment first (secrets), config fallback.
    pub fn remote_api_key(&self) -> Option<String> {
        std::env::var(ENV_API_KEY)
            .ok()
            .or_else(|| self.provider.api_key.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_defaults_are_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn test_unknown_keys_rejected() {
        let err = toml::from_str::<PipelineConfig>("not_a_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("not_a_key"));
        let err = toml::from_str::<PipelineConfig>("[indexing]\nmystery = 2\n").unwrap_err();
        assert!(err.to_string().contains("mystery"));
    }

    #[test]
    fn test_partial_file_fills_defaults() {
        let config: PipelineConfig =
            toml::from_str("corpus = \"data\"\n[online]\ntop_k = 7\n").unwrap();
        assert_eq!(config.corpus, Some(PathBuf::from("data")));
        assert_eq!(config.online.top_k, 7);
        assert_eq!(config.online.pool_size, 20);
        assert_eq!(config.indexing.pseudoqueries_per_dataset, 10);
    }

    #[test]
    fn test_zero_knob_rejected() {
        let config: PipelineConfig =
            toml::from_str("[indexing]\npseudoqueries_per_dataset = 0\n").unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn test_cache_path_defaults_beside_index() {
        let config: PipelineConfig = toml::from_str("index_path = \"out/my.tsk\"\n").unwrap();
        assert_eq!(config.cache_path(), PathBuf::from("out/my.tsk.cache"));
    }

    #[test]
    fn test_missing_tokens_configurable() {
        let config: PipelineConfig =
            toml::from_str("missing_tokens = [\"\", \"-\", \"missing\"]\n").unwrap();
        assert_eq!(config.missing_tokens, vec!["", "-", "missing"]);
        let defaults = PipelineConfig::default().missing_tokens;
        assert!(defaults.contains(&"NA".to_string()));
        assert!(defaults.contains(&"".to_string()));
    }
}
