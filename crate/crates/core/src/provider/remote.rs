//! Remote providers speaking a minimal JSON-over-HTTP contract.
//!
//! Generation: `POST {base_url}/generate` with
//! `{"role", "prompt", "max_output_tokens", "temperature"}`, answered by
//! `{"text": "...", "truncated": bool?}`.
//! Embedding: `POST {base_url}/embed` with `{"texts": [...]}`, answered by
//! `{"vectors": [[f32, ...], ...]}`.
//!
//! Transient failures (HTTP 5xx, transport errors) retry with exponential
//! backoff; after the attempt budget the call fails with
//! [`ProviderError::ProviderUnavailable`]. Each provider bounds its own
//! in-flight requests with a counting semaphore sized by
//! [`RemoteConfig::max_in_flight`].

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    validate_embed_input, EmbeddingVector, GenerationRequest, ProviderError, TextEmbedder,
    TextGenerator,
};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    /// Maximum concurrent requests per provider instance.
    pub max_in_flight: usize,
    pub attempts: usize,
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            max_in_flight: 8,
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
            request_timeout: Duration::from_secs(60),
        }
    }
}

/// Counting semaphore; `acquire` blocks until a permit frees up.
struct Semaphore {
    state: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            state: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(self: &Arc<Self>) -> Permit {
        let mut available = self.state.lock().unwrap();
        while *available == 0 {
            available = self.cv.wait(available).unwrap();
        }
        *available -= 1;
        Permit { sem: Arc::clone(self) }
    }
}

struct Permit {
    sem: Arc<Semaphore>,
}

impl Drop for Permit {
    fn drop(&mut self) {
        *self.sem.state.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

struct Transport {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    semaphore: Arc<Semaphore>,
}

impl Transport {
    fn new(config: RemoteConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .expect("http client");
        let semaphore = Arc::new(Semaphore::new(config.max_in_flight));
        Self {
            config,
            client,
            semaphore,
        }
    }

    /// POST a JSON body, retrying transient failures with exponential backoff.
    fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, ProviderError> {
        let _permit = self.semaphore.acquire();
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let mut backoff = self.config.initial_backoff;
        let mut last_error = String::new();

        for attempt in 1..=self.config.attempts {
            let mut request = self.client.post(&url).json(body);
            if let Some(key) = &self.config.api_key {
                request = request.bearer_auth(key);
            }
            let started = Instant::now();
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    tracing::debug!(
                        target: "provider",
                        url = %url,
                        status = status.as_u16(),
                        latency_ms = started.elapsed().as_millis() as u64,
                        attempt,
                        "remote call"
                    );
                    if status.is_success() {
                        return response
                            .json::<R>()
                            .map_err(|e| ProviderError::MalformedResponse(e.to_string()));
                    }
                    last_error = format!("HTTP {status}");
                    if !status.is_server_error() {
                        // 4xx will not improve on retry
                        break;
                    }
                }
                Err(e) => last_error = e.to_string(),
            }
            if attempt < self.config.attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(ProviderError::ProviderUnavailable {
            attempts: self.config.attempts,
            reason: last_error,
        })
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    role: &'a str,
    prompt: &'a str,
    max_output_tokens: usize,
    temperature: f64,
}

#[derive(Deserialize)]
struct GenerateReply {
    text: String,
    #[serde(default)]
    truncated: bool,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

pub struct RemoteGenerator {
    transport: Transport,
    id: String,
}

impl RemoteGenerator {
    pub fn new(config: RemoteConfig) -> Self {
        let id = format!("remote-gen:{}", config.base_url);
        Self {
            transport: Transport::new(config),
            id,
        }
    }
}

impl TextGenerator for RemoteGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let body = GenerateBody {
            role: request.role.label(),
            prompt: &request.prompt,
            max_output_tokens: request.max_output_tokens,
            temperature: request.temperature,
        };
        let started = Instant::now();
        let reply: GenerateReply = self.transport.post_json("generate", &body)?;
        tracing::info!(
            target: "provider",
            role = request.role.label(),
            prompt_chars = request.prompt.len(),
            output_chars = reply.text.len(),
            latency_ms = started.elapsed().as_millis() as u64,
            "generate"
        );
        if reply.truncated {
            tracing::warn!(target: "provider", role = request.role.label(), "output truncated");
        }
        Ok(reply.text)
    }

    fn id(&self) -> &str {
        &self.id
    }
}

pub struct RemoteEmbedder {
    transport: Transport,
    dimension: usize,
    id: String,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig, dimension: usize) -> Self {
        let id = format!("remote-embed:{}", config.base_url);
        Self {
            transport: Transport::new(config),
            dimension,
            id,
        }
    }
}

impl TextEmbedder for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        validate_embed_input(texts)?;
        let started = Instant::now();
        let reply: EmbedReply = self.transport.post_json("embed", &EmbedBody { texts })?;
        tracing::info!(
            target: "provider",
            texts = texts.len(),
            latency_ms = started.elapsed().as_millis() as u64,
            "embed"
        );
        if reply.vectors.len() != texts.len() {
            return Err(ProviderError::MalformedResponse(format!(
                "expected {} vectors, got {}",
                texts.len(),
                reply.vectors.len()
            )));
        }
        reply
            .vectors
            .into_iter()
            .map(|values| {
                if values.len() != self.dimension {
                    return Err(ProviderError::MalformedResponse(format!(
                        "expected dimension {}, got {}",
                        self.dimension,
                        values.len()
                    )));
                }
                EmbeddingVector::new(values)
            })
            .collect()
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn id(&self) -> &str {
        &self.id
    }
}
