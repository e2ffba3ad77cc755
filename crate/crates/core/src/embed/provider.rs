//! HTTP embedding-provider client with a persistent on-disk cache.
//!
//! Wire format follows the common embeddings-endpoint convention: POST with
//! body `{"model": ..., "input": [texts]}`, response
//! `{"data": [{"embedding": [...]}, ...]}` in input order. Vectors are
//! L2-normalized on receipt. The cache is an [`EmbeddingStore`] keyed by
//! `"{model}::{content_id(text)}"`, so switching models never poisons it.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, Embedding, EmbeddingStore, VectorSource};
use crate::data::content_id;

#[derive(Debug, Clone)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model: String,
    /// Texts per HTTP request.
    pub batch_size: usize,
    /// Requests in flight at once.
    pub max_concurrent: usize,
    pub timeout_s: f64,
    /// Extra attempts after the first, for 429/5xx/transport failures.
    pub max_retries: u32,
    /// Sleep before retry k (0-based) is `backoff_base_s · 2^k`.
    pub backoff_base_s: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model: String::new(),
            batch_size: 64,
            max_concurrent: 4,
            timeout_s: 30.0,
            max_retries: 3,
            backoff_base_s: 0.5,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.base_url.is_empty() {
            return Err(EmbedError::Config("base_url must be set".into()));
        }
        if self.model.is_empty() {
            return Err(EmbedError::Config("model must be set".into()));
        }
        if self.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be at least 1".into()));
        }
        if self.max_concurrent == 0 {
            return Err(EmbedError::Config("max_concurrent must be at least 1".into()));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(EmbedError::Config("timeout_s must be positive".into()));
        }
        if !(self.backoff_base_s.is_finite() && self.backoff_base_s >= 0.0) {
            return Err(EmbedError::Config("backoff_base_s must be non-negative".into()));
        }
        Ok(())
    }
}

pub struct ProviderClient {
    cfg: ProviderConfig,
    agent: ureq::Agent,
    requests: AtomicU64,
}

impl ProviderClient {
    pub fn new(cfg: ProviderConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            cfg,
            agent,
            requests: AtomicU64::new(0),
        })
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests_issued(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    /// The store id under which this client caches a text's embedding.
    pub fn cache_key(&self, text: &str) -> String {
        format!("{}::{}", self.cfg.model, content_id(text))
    }

    /// Embed `texts`, one result per input in input order.
    ///
    /// Cache-resident texts cost no network traffic; the rest are deduped,
    /// batched, fetched with up to `max_concurrent` requests in flight, and
    /// appended to the cache (saved atomically when `cache_path` is given).
    pub fn embed_texts(
        &self,
        texts: &[impl AsRef<str>],
        cache_path: Option<&Path>,
    ) -> Result<Vec<Embedding>, EmbedError> {
        let mut cache: Option<EmbeddingStore> = match cache_path {
            Some(p) if p.exists() => Some(EmbeddingStore::open(p)?),
            _ => None,
        };

        let keys: Vec<String> = texts.iter().map(|t| self.cache_key(t.as_ref())).collect();
        let mut need: Vec<(String, String)> = Vec::new();
        let mut queued: HashSet<&str> = HashSet::new();
        for (key, text) in keys.iter().zip(texts) {
            let cached = cache.as_ref().is_some_and(|c| c.contains(key));
            if !cached && queued.insert(key.as_str()) {
                need.push((key.clone(), text.as_ref().to_string()));
            }
        }

        if !need.is_empty() {
            let fetched = self.fetch_all(&need)?;
            let dim = fetched[&need[0].0].dim();
            let cache = match &mut cache {
                Some(c) => {
                    if c.dim() != dim {
                        return Err(EmbedError::DimMismatch {
                            expected: c.dim(),
                            got: dim,
                        });
                    }
                    c
                }
                None => cache.insert(EmbeddingStore::new(dim)?),
            };
            for (key, _) in &need {
                cache.append(key.clone(), &fetched[key])?;
            }
            if let Some(p) = cache_path {
                cache.save(p)?;
            }
        }

        let mut out = Vec::with_capacity(texts.len());
        for key in &keys {
            let cache = cache.as_ref().expect("non-empty input implies a cache");
            out.push(cache.lookup(key)?);
        }
        Ok(out)
    }

    /// Fetch every (key, text) pair, batched and concurrent; first error wins
    /// and stops the remaining workers.
    fn fetch_all(&self, need: &[(String, String)]) -> Result<HashMap<String, Embedding>, EmbedError> {
        let batches: Vec<&[(String, String)]> = need.chunks(self.cfg.batch_size).collect();
        let workers = self.cfg.max_concurrent.min(batches.len()).max(1);
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let results: Mutex<Vec<Option<Vec<Embedding>>>> = Mutex::new(vec![None; batches.len()]);
        let error: Mutex<Option<EmbedError>> = Mutex::new(None);

        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if failed.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= batches.len() {
                        break;
                    }
                    let texts: Vec<&str> = batches[i].iter().map(|(_, t)| t.as_str()).collect();
                    match self.fetch_batch(&texts) {
                        Ok(embs) => results.lock().unwrap()[i] = Some(embs),
                        Err(e) => {
                            failed.store(true, Ordering::SeqCst);
                            let mut slot = error.lock().unwrap();
                            if slot.is_none() {
                                *slot = Some(e);
                            }
                            break;
                        }
                    }
                });
            }
        });

        if let Some(e) = error.into_inner().unwrap() {
            return Err(e);
        }
        let results = results.into_inner().unwrap();
        let mut map = HashMap::with_capacity(need.len());
        for (batch, embs) in batches.iter().zip(results) {
            let embs = embs.expect("every batch resolved or an error was raised");
            for ((key, _), emb) in batch.iter().zip(embs) {
                map.insert(key.clone(), emb);
            }
        }
        Ok(map)
    }

    fn fetch_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        #[derive(Serialize)]
        struct Req<'a> {
            model: &'a str,
            input: &'a [&'a str],
        }
        let body = serde_json::to_string(&Req {
            model: &self.cfg.model,
            input: texts,
        })
        .expect("request serialization cannot fail");

        let mut attempt: u32 = 0;
        loop {
            self.requests.fetch_add(1, Ordering::SeqCst);
            let sent = self
                .agent
                .post(&self.cfg.base_url)
                .header("content-type", "application/json")
                .send(body.as_str());
            match sent {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| EmbedError::Transport(e.to_string()))?;
                    if (200..300).contains(&status) {
                        return parse_batch(&text, texts.len());
                    }
                    let retryable = status == 429 || status >= 500;
                    if retryable && attempt < self.cfg.max_retries {
                        thread::sleep(self.backoff(attempt));
                        attempt += 1;
                        continue;
                    }
                    let excerpt: String = text.chars().take(200).collect();
                    return Err(EmbedError::Provider {
                        status,
                        body: excerpt,
                    });
                }
                Err(e) => {
                    if attempt < self.cfg.max_retries {
                        thread::sleep(self.backoff(attempt));
                        attempt += 1;
                        continue;
                    }
                    return Err(EmbedError::Transport(e.to_string()));
                }
            }
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.cfg.backoff_base_s * 2f64.powi(attempt as i32))
    }
}

fn parse_batch(body: &str, expected: usize) -> Result<Vec<Embedding>, EmbedError> {
    #[derive(Deserialize)]
    struct Resp {
        data: Vec<Item>,
    }
    #[derive(Deserialize)]
    struct Item {
        embedding: Vec<f32>,
    }
    let resp: Resp =
        serde_json::from_str(body).map_err(|e| EmbedError::BadResponse(e.to_string()))?;
    if resp.data.len() != expected {
        return Err(EmbedError::BadResponse(format!(
            "expected {expected} embeddings, got {}",
            resp.data.len()
        )));
    }
    let mut out = Vec::with_capacity(expected);
    let mut dim: Option<usize> = None;
    for item in resp.data {
        let emb = Embedding::unit(item.embedding)
            .map_err(|e| EmbedError::BadResponse(format!("unusable embedding: {e}")))?;
        match dim {
            Some(d) if d != emb.dim() => {
                return Err(EmbedError::DimMismatch {
                    expected: d,
                    got: emb.dim(),
                })
            }
            _ => dim = Some(emb.dim()),
        }
        out.push(emb);
    }
    Ok(out)
}
