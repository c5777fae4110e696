use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Anything that maps text to a fixed-dimension real vector.
pub trait EmbeddingBackend: Send + Sync {
    /// Stable identity used in cache keys and error messages.
    fn identity(&self) -> String;

    fn model(&self) -> &str;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Deterministic stand-in for an embedding service: each text seeds a
/// ChaCha stream from a stable hash of `(seed, text)` and yields a unit-norm
/// Gaussian vector.
#[derive(Debug, Clone)]
pub struct OfflineBackend {
    seed: u64,
    dim: usize,
    model: String,
}

impl OfflineBackend {
    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("embedding dimension must be >= 1".into()));
        }
        Ok(OfflineBackend {
            seed,
            dim,
            model: format!("offline-gaussian-{dim}"),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(text.as_bytes());
        let digest = h.finalize();
        let stream_seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

impl EmbeddingBackend for OfflineBackend {
    fn identity(&self) -> String {
        format!("offline:seed={}:dim={}", self.seed, self.dim)
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_token_env() -> String {
    "EMBEDDING_API_KEY".into()
}
fn default_batch_size() -> usize {
    64
}
fn default_concurrency() -> usize {
    4
}
fn default_retries() -> u32 {
    4
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_timeout_s() -> u64 {
    60
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            model: model.into(),
            token_env: default_token_env(),
            batch_size: default_batch_size(),
            max_concurrency: default_concurrency(),
            max_retries: default_retries(),
            initial_backoff_ms: default_backoff_ms(),
            timeout_s: default_timeout_s(),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [String],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

/// HTTP client for an OpenAI-style embedding endpoint:
/// `POST {input: [..], model}` returning `{data: [{embedding: [..]}]}`.
pub struct RemoteBackend {
    config: RemoteConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.batch_size == 0 || config.max_concurrency == 0 {
            return Err(Error::InvalidInput("batch size and concurrency must be >= 1".into()));
        }
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .build()
            .into();
        Ok(RemoteBackend { config, token, agent })
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Backend {
            backend: self.identity(),
            message: message.into(),
        }
    }

    fn request(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, String> {
        let mut req = self.agent.post(&self.config.url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(EmbedRequest {
                input: texts,
                model: &self.config.model,
            })
            .map_err(|e| e.to_string())?;
        let body: EmbedResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        if body.data.len() != texts.len() {
            return Err(format!("asked for {} embeddings, got {}", texts.len(), body.data.len()));
        }
        Ok(body.data.into_iter().map(|d| d.embedding).collect())
    }

    fn request_with_retry(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut delay = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.request(texts) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("{} attempt {} failed: {e}", self.identity(), attempt + 1);
                    last = e;
                }
            }
            if attempt < self.config.max_retries {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(self.fail(format!("gave up after {} attempts: {last}", self.config.max_retries + 1)))
    }
}

impl EmbeddingBackend for RemoteBackend {
    fn identity(&self) -> String {
        format!("remote:{}", self.config.url)
    }

    fn model(&self) -> &str {
        &self.config.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<&[String]> = texts.chunks(self.config.batch_size).collect();
        let mut results: Vec<Option<Result<Vec<Vec<f64>>>>> = (0..chunks.len()).map(|_| None).collect();
        // At most `max_concurrency` requests in flight.
        for (wave_idx, wave) in chunks.chunks(self.config.max_concurrency).enumerate() {
            let base = wave_idx * self.config.max_concurrency;
            let wave_results: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave.iter().map(|chunk| s.spawn(move || self.request_with_retry(chunk))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(self.fail("request thread panicked"))))
                    .collect()
            });
            for (i, r) in wave_results.into_iter().enumerate() {
                results[base + i] = Some(r);
            }
        }
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r.expect("every chunk ran")?);
        }
        Ok(out)
    }
}

/// Content address of an embedding: SHA-256 over backend identity, model and text.
pub fn cache_key(identity: &str, model: &str, text: &str) -> String {
    let mut h = Sha256::new();
    for part in [identity, model, text] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// On-disk cache entry, one `{key}.json` file per embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub text: String,
    pub model: String,
    pub dim: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            1.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

/// Caching front end over a backend. Enforces one embedding dimension for
/// everything the backend produces.
pub struct Embedder {
    backend: Box<dyn EmbeddingBackend>,
    cache_dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, Vec<f64>>>,
    dim: Mutex<Option<usize>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
    tmp_counter: AtomicUsize,
}

impl Embedder {
    pub fn new(backend: Box<dyn EmbeddingBackend>, cache_dir: Option<PathBuf>) -> Result<Self> {
        if let Some(dir) = &cache_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(Embedder {
            backend,
            cache_dir,
            memory: RwLock::new(HashMap::new()),
            dim: Mutex::new(None),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            tmp_counter: AtomicUsize::new(0),
        })
    }

    pub fn backend_identity(&self) -> String {
        self.backend.identity()
    }

    pub fn model(&self) -> &str {
        self.backend.model()
    }

    pub fn dim(&self) -> Option<usize> {
        *self.dim.lock().expect("dim lock")
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
        }
    }

    pub fn key(&self, text: &str) -> String {
        cache_key(&self.backend.identity(), self.backend.model(), text)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed_all(&[text.to_string()])?.remove(0))
    }

    /// Embeds `texts` in order, serving repeats from the cache and sending
    /// each distinct miss to the backend once.
    pub fn embed_all(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(Error::InvalidInput(format!("text {i} is empty")));
        }
        let keys: Vec<String> = texts.iter().map(|t| self.key(t)).collect();
        let mut found: HashMap<&str, Vec<f64>> = HashMap::new();
        let mut missing: Vec<(&str, &String)> = Vec::new();
        for (key, text) in keys.iter().zip(texts) {
            if found.contains_key(key.as_str()) || missing.iter().any(|(k, _)| *k == key) {
                continue;
            }
            match self.lookup(key)? {
                Some(v) => {
                    self.check_dim(v.len())?;
                    self.hits.fetch_add(1, Ordering::SeqCst);
                    found.insert(key, v);
                }
                None => missing.push((key, text)),
            }
        }
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|(_, t)| (*t).clone()).collect();
            let vectors = self.backend.embed_batch(&batch)?;
            if vectors.len() != batch.len() {
                return Err(Error::Backend {
                    backend: self.backend.identity(),
                    message: format!("returned {} vectors for {} texts", vectors.len(), batch.len()),
                });
            }
            for ((key, text), v) in missing.iter().zip(vectors) {
                self.check_dim(v.len())?;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Backend {
                        backend: self.backend.identity(),
                        message: "non-finite embedding".into(),
                    });
                }
                self.misses.fetch_add(1, Ordering::SeqCst);
                self.store(key, text, &v)?;
                found.insert(key, v);
            }
        }
        Ok(keys.iter().map(|k| found[k.as_str()].clone()).collect())
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        let mut dim = self.dim.lock().expect("dim lock");
        match *dim {
            None => {
                *dim = Some(got);
                Ok(())
            }
            Some(expected) if expected == got => Ok(()),
            Some(expected) => Err(Error::DimensionDrift {
                backend: self.backend.identity(),
                expected,
                got,
            }),
        }
    }

    fn entry_path(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn lookup(&self, key: &str) -> Result<Option<Vec<f64>>> {
        if let Some(v) = self.memory.read().expect("cache lock").get(key) {
            return Ok(Some(v.clone()));
        }
        let Some(path) = self.entry_path(key) else {
            return Ok(None);
        };
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let entry: CacheEntry = match serde_json::from_str(&text) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {}: {e}", path.display());
                return Ok(None);
            }
        };
        if entry.vector.len() != entry.dim {
            log::warn!("ignoring cache entry {} with inconsistent dim", path.display());
            return Ok(None);
        }
        self.memory
            .write()
            .expect("cache lock")
            .insert(key.to_string(), entry.vector.clone());
        Ok(Some(entry.vector))
    }

    fn store(&self, key: &str, text: &str, v: &[f64]) -> Result<()> {
        self.memory.write().expect("cache lock").insert(key.to_string(), v.to_vec());
        let Some(path) = self.entry_path(key) else {
            return Ok(());
        };
        let entry = CacheEntry {
            text: text.to_string(),
            model: self.backend.model().to_string(),
            dim: v.len(),
            vector: v.to_vec(),
        };
        let n = self.tmp_counter.fetch_add(1, Ordering::SeqCst);
        let tmp = path.with_extension(format!("json.tmp.{}.{n}", std::process::id()));
        fs::write(&tmp, serde_json::to_string(&entry)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Reads a cache entry file directly.
pub fn read_cache_entry(path: &Path) -> Result<CacheEntry> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
