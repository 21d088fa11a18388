//! Persistent embedding cache.
//!
//! The cache is an append-only text file of records
//! `<provider-id>\t<sha256(text)>\t<dim>\t<base64 little-endian f32 vector>`
//! kept beside the index, so an interrupted or repeated offline build never
//! re-embeds text it has already paid for. Reads are concurrent; appends are
//! serialized through a mutex.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use sha2::{Digest, Sha256};

use super::{EmbeddingVector, ProviderError, TextEmbedder};

pub struct EmbeddingCache {
    path: PathBuf,
    entries: RwLock<HashMap<(String, String), EmbeddingVector>>,
    writer: Mutex<File>,
}

impl EmbeddingCache {
    /// Open (or create) a cache file, loading all existing records. Corrupt
    /// lines are skipped with a warning; they only cost a re-embed.
    pub fn open(path: &Path) -> Result<Self, ProviderError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                match parse_record(&line) {
                    Some((key, vector)) => {
                        entries.insert(key, vector);
                    }
                    None => {
                        tracing::warn!(
                            target: "provider",
                            path = %path.display(),
                            line = lineno + 1,
                            "skipping corrupt cache record"
                        );
                    }
                }
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, provider_id: &str, text: &str) -> Option<EmbeddingVector> {
        let key = (provider_id.to_string(), text_hash(text));
        self.entries.read().unwrap().get(&key).cloned()
    }

    /// Store one embedding. The on-disk record holds f32 components, so the
    /// vector is quantized to f32 precision first; the quantized form is what
    /// later reads will return.
    pub fn put(
        &self,
        provider_id: &str,
        text: &str,
        vector: &EmbeddingVector,
    ) -> Result<EmbeddingVector, ProviderError> {
        let quantized = vector.quantized();
        let hash = text_hash(text);
        let mut bytes = Vec::with_capacity(quantized.dimension() * 4);
        for v in quantized.values() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let line = format!(
            "{provider_id}\t{hash}\t{}\t{}\n",
            quantized.dimension(),
            BASE64.encode(&bytes)
        );
        {
            let mut writer = self.writer.lock().unwrap();
            writer.write_all(line.as_bytes())?;
            writer.flush()?;
        }
        self.entries
            .write()
            .unwrap()
            .insert((provider_id.to_string(), hash), quantized.clone());
        Ok(quantized)
    }
}

fn text_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    format!("{:x}", hasher.finalize())
}

fn parse_record(line: &str) -> Option<((String, String), EmbeddingVector)> {
    let mut fields = line.split('\t');
    let provider = fields.next()?.to_string();
    let hash = fields.next()?.to_string();
    let dim: usize = fields.next()?.parse().ok()?;
    let bytes = BASE64.decode(fields.next()?).ok()?;
    if fields.next().is_some() || bytes.len() != dim * 4 {
        return None;
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    EmbeddingVector::new(values).ok().map(|v| ((provider, hash), v))
}

/// A [`TextEmbedder`] that consults the cache first and only forwards misses
/// to the inner provider. Cache hits preserve input order.
pub struct CachedEmbedder<'a> {
    inner: &'a dyn TextEmbedder,
    cache: &'a EmbeddingCache,
    misses: AtomicUsize,
}

impl<'a> CachedEmbedder<'a> {
    pub fn new(inner: &'a dyn TextEmbedder, cache: &'a EmbeddingCache) -> Self {
        Self {
            inner,
            cache,
            misses: AtomicUsize::new(0),
        }
    }

    /// Number of texts that had to go to the inner provider so far.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

impl TextEmbedder for CachedEmbedder<'_> {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        super::validate_embed_input(texts)?;
        let mut out: Vec<Option<EmbeddingVector>> = texts
            .iter()
            .map(|t| self.cache.get(self.inner.id(), t))
            .collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            self.misses.fetch_add(missing.len(), Ordering::Relaxed);
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.inner.embed(&batch)?;
            for (&i, vector) in missing.iter().zip(vectors) {
                out[i] = Some(self.cache.put(self.inner.id(), &texts[i], &vector)?);
            }
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn id(&self) -> &str {
        self.inner.id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::HashEmbedder;
    use tempfile::TempDir;

    /// Counts how many texts reach the wrapped embedder.
    struct CountingEmbedder {
        inner: HashEmbedder,
        calls: AtomicUsize,
    }

    impl TextEmbedder for CountingEmbedder {
        fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
            self.calls.fetch_add(texts.len(), Ordering::Relaxed);
            self.inner.embed(texts)
        }
        fn dimension(&self) -> usize {
            self.inner.dimension()
        }
        fn id(&self) -> &str {
            self.inner.id()
        }
    }

    #[test]
    fn test_cache_round_trip_and_warm_reads() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("embeddings.cache");
        let counting = CountingEmbedder {
            inner: HashEmbedder::new(16),
            calls: AtomicUsize::new(0),
        };
        let texts: Vec<String> = vec!["alpha".into(), "beta".into(), "alpha".into()];

        let cold;
        {
            let cache = EmbeddingCache::open(&path).unwrap();
            let cached = CachedEmbedder::new(&counting, &cache);
            cold = cached.embed(&texts).unwrap();
            // misses resolve in one batch call, so the repeated text counts too
            assert_eq!(counting.calls.load(Ordering::Relaxed), 3);
        }

        // Fresh cache handle over the same file: zero provider calls.
        let cache = EmbeddingCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        let cached = CachedEmbedder::new(&counting, &cache);
        let warm = cached.embed(&texts).unwrap();
        assert_eq!(counting.calls.load(Ordering::Relaxed), 3);
        assert_eq!(cached.misses(), 0);
        assert_eq!(cold, warm);
    }

    #[test]
    fn test_corrupt_lines_skipped() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("embeddings.cache");
        std::fs::write(&path, "garbage line\nmore\tgarbage\n").unwrap();
        let cache = EmbeddingCache::open(&path).unwrap();
        assert!(cache.is_empty());
    }

    #[test]
    fn test_concurrent_embeds_share_one_cache() {
        let dir = TempDir::new().unwrap();
        let cache = EmbeddingCache::open(&dir.path().join("c")).unwrap();
        let embedder = HashEmbedder::new(32);
        let cached = CachedEmbedder::new(&embedder, &cache);

        std::thread::scope(|scope| {
            for t in 0..8 {
                let cached = &cached;
                scope.spawn(move || {
                    let texts: Vec<String> = (0..20).map(|i| format!("text {}", (i + t) % 10)).collect();
                    let vectors = cached.embed(&texts).unwrap();
                    for (text, vector) in texts.iter().zip(&vectors) {
                        assert_eq!(vector, &cached.embed(std::slice::from_ref(text)).unwrap()[0]);
                    }
                });
            }
        });

        // all appended records parse back; distinct texts = 10
        let reopened = EmbeddingCache::open(cache.path()).unwrap();
        assert_eq!(reopened.len(), 10);
    }

    #[test]
    fn test_cache_keyed_by_provider_id() {
        let dir = TempDir::new().unwrap();
        let cache = EmbeddingCache::open(&dir.path().join("c")).unwrap();
        let v = EmbeddingVector::new(vec![1.0, 2.0]).unwrap();
        cache.put("prov-a", "text", &v).unwrap();
        assert_eq!(cache.get("prov-a", "text"), Some(v));
        assert_eq!(cache.get("prov-b", "text"), None);
    }
}
