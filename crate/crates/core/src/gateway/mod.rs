//! Access to the language model: sampled generations, sentence embeddings and
//! the summarization call.
//!
//! A [`Gateway`] wraps a [`Backend`] (HTTP or the deterministic mock) with a
//! concurrency limiter, retries with jittered exponential backoff, an on-disk
//! sample cache and an in-memory embedding memo.

mod cache;
mod http;
mod mock;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{GenerationSample, QuestionRecord};

pub use cache::{cache_file_name, CacheLine, SampleCache};
pub use http::HttpBackend;
pub use mock::{mock_embedding, FixtureLine, MockBackend, MockSummary};

/// Environment variable holding the endpoint API key.
pub const API_KEY_ENV: &str = "ASC_API_KEY";

const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Read from `ASC_API_KEY`; never serialized.
    #[serde(skip)]
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embed_model: String,
    pub max_concurrency: usize,
    pub timeout_secs: f64,
    pub max_retries: u32,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key: None,
            chat_model: "gpt-3.5-turbo".into(),
            embed_model: "text-embedding-3-small".into(),
            max_concurrency: 8,
            timeout_secs: 60.0,
            max_retries: 3,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency < 1 {
            return Err(Error::Config("max_concurrency must be at least 1".into()));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(Error::Config("timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Identifies which generation a chat request produces. Only the mock
/// backend looks at it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleKey {
    pub question_id: String,
    pub sample_index: usize,
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub prompt: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub sample: Option<SampleKey>,
}

/// A chat-completion plus embedding provider.
pub trait Backend: Send + Sync {
    fn chat(&self, model: &str, request: &ChatRequest) -> Result<String>;

    /// Raw (not necessarily normalized) embeddings, one per input text.
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    /// Scales `values` to unit L2 norm. A zero vector is kept as is.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// Counting semaphore bounding in-flight backend requests.
#[derive(Debug)]
pub struct Limiter {
    capacity: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock();
        while *n >= self.capacity {
            self.freed.wait(&mut n);
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::SeqCst);
        Permit { limiter: self }
    }

    /// Highest number of simultaneous permits observed.
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock();
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Short stable hash of a rendered prompt, part of the cache key.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Substitutes `{question}` in a generation template.
pub fn render_generation_prompt(template: &str, question: &QuestionRecord) -> String {
    template.replace("{question}", &question.text)
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    config: EndpointConfig,
    cache: Option<SampleCache>,
    limiter: Limiter,
    embed_memo: Mutex<HashMap<String, EmbeddingVector>>,
    prompt_budget: usize,
    retry_base: Duration,
    fetches: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, config: EndpointConfig) -> Self {
        Self {
            limiter: Limiter::new(config.max_concurrency),
            backend,
            config,
            cache: None,
            embed_memo: Mutex::new(HashMap::new()),
            prompt_budget: 100_000,
            retry_base: Duration::from_millis(250),
            fetches: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: SampleCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Character budget for summarization prompts.
    pub fn with_prompt_budget(mut self, budget: usize) -> Self {
        self.prompt_budget = budget;
        self
    }

    pub fn with_retry_base(mut self, base: Duration) -> Self {
        self.retry_base = base;
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn limiter(&self) -> &Limiter {
        &self.limiter
    }

    /// Number of generations fetched from the backend (cache misses).
    pub fn fetch_count(&self) -> usize {
        self.fetches.load(Ordering::SeqCst)
    }

    fn with_retries<T>(&self, context: &str, mut call: impl FnMut() -> Result<T>) -> Result<T> {
        let mut attempt = 0u32;
        loop {
            let outcome = {
                let _permit = self.limiter.acquire();
                call()
            };
            match outcome {
                Err(Error::Transport { status, .. }) if attempt < self.config.max_retries && is_retryable(status) => {
                    let backoff = self.retry_base.saturating_mul(1u32 << attempt.min(16));
                    let jitter = rand::thread_rng().gen_range(0.5..1.0);
                    log::warn!("{context}: retry {} after {:?}", attempt + 1, backoff.mul_f64(jitter));
                    std::thread::sleep(backoff.mul_f64(jitter));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// Returns exactly `m` samples for `question`, reusing cached ones and
    /// fetching (then caching) the rest. Sample `i` uses seed `seed_base + i`.
    ///
    /// Successful fetches are cached even if another sample fails; the first
    /// failure is returned after all fetches finish.
    pub fn sample_generations(
        &self,
        question: &QuestionRecord,
        prompt_template: &str,
        m: usize,
        temperature: f64,
        seed_base: u64,
    ) -> Result<Vec<GenerationSample>> {
        if m < 1 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        let prompt = render_generation_prompt(prompt_template, question);
        let hash = prompt_hash(&prompt);
        let mut slots: Vec<Option<GenerationSample>> = match &self.cache {
            Some(cache) => cache.lookup(&question.id, &self.config.chat_model, temperature, &hash, m)?,
            None => vec![None; m],
        };
        let missing: Vec<usize> = (0..m).filter(|&i| slots[i].is_none()).collect();
        if missing.is_empty() {
            return Ok(slots.into_iter().flatten().collect());
        }

        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(usize, Result<GenerationSample>)>> = Mutex::new(Vec::new());
        let workers = missing.len().min(self.config.max_concurrency);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&index) = missing.get(k) else { break };
                    let outcome = self.fetch_one(question, &prompt, &hash, index, temperature, seed_base);
                    results.lock().push((index, outcome));
                });
            }
        });

        let mut results = results.into_inner();
        results.sort_by_key(|(i, _)| *i);
        let mut first_error = None;
        for (index, outcome) in results {
            match outcome {
                Ok(sample) => slots[index] = Some(sample),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(slots.into_iter().flatten().collect()),
        }
    }

    fn fetch_one(
        &self,
        question: &QuestionRecord,
        prompt: &str,
        hash: &str,
        index: usize,
        temperature: f64,
        seed_base: u64,
    ) -> Result<GenerationSample> {
        let seed = seed_base + index as u64;
        let request = ChatRequest {
            prompt: prompt.to_string(),
            temperature,
            seed: Some(seed),
            sample: Some(SampleKey {
                question_id: question.id.clone(),
                sample_index: index,
            }),
        };
        let context = format!("question {} sample {index}", question.id);
        let text = self
            .with_retries(&context, || self.backend.chat(&self.config.chat_model, &request))
            .map_err(|e| match e {
                Error::Transport { status, message, .. } => Error::Transport {
                    context: context.clone(),
                    status,
                    message,
                },
                other => other,
            })?;
        self.fetches.fetch_add(1, Ordering::SeqCst);
        let sample = GenerationSample {
            question_id: question.id.clone(),
            sample_index: index,
            text,
            temperature,
            seed,
        };
        if let Some(cache) = &self.cache {
            cache.append(&CacheLine {
                sample: sample.clone(),
                chat_model: self.config.chat_model.clone(),
                prompt_hash: hash.to_string(),
            })?;
        }
        Ok(sample)
    }

    /// Cache-only lookup: all `m` samples must already be on disk.
    pub fn cached_samples(
        &self,
        question: &QuestionRecord,
        prompt_template: &str,
        m: usize,
        temperature: f64,
    ) -> Result<Vec<GenerationSample>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Config("no cache directory configured".into()))?;
        let prompt = render_generation_prompt(prompt_template, question);
        let slots = cache.lookup(
            &question.id,
            &self.config.chat_model,
            temperature,
            &prompt_hash(&prompt),
            m,
        )?;
        let have = slots.iter().filter(|s| s.is_some()).count();
        if have < m {
            return Err(Error::IncompleteCache {
                question_id: question.id.clone(),
                have,
                want: m,
            });
        }
        Ok(slots.into_iter().flatten().collect())
    }

    /// One unit-norm vector per text, in input order. Vectors are memoized by
    /// text; uncached texts are requested in batches.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let pending: Vec<String> = {
            let memo = self.embed_memo.lock();
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .filter(|t| !memo.contains_key(*t) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        let mut dimension = self.embed_memo.lock().values().next().map(EmbeddingVector::dimension);
        for batch in pending.chunks(EMBED_BATCH) {
            let raw = self.with_retries("embeddings", || self.backend.embed(&self.config.embed_model, batch))?;
            if raw.len() != batch.len() {
                return Err(Error::Transport {
                    context: "embeddings".into(),
                    status: None,
                    message: format!("expected {} vectors, got {}", batch.len(), raw.len()),
                });
            }
            let mut memo = self.embed_memo.lock();
            for (text, values) in batch.iter().zip(raw) {
                let expected = *dimension.get_or_insert(values.len());
                if values.len() != expected {
                    return Err(Error::DimensionMismatch {
                        expected,
                        actual: values.len(),
                    });
                }
                memo.insert(text.clone(), EmbeddingVector::normalized(values));
            }
        }
        let memo = self.embed_memo.lock();
        Ok(texts.iter().map(|t| memo[t].clone()).collect())
    }

    /// Sends `prompt` once at temperature 0 and returns the completion verbatim.
    pub fn summarize(&self, prompt: &str) -> Result<String> {
        let len = prompt.chars().count();
        if len > self.prompt_budget {
            return Err(Error::PromptOverBudget {
                len,
                budget: self.prompt_budget,
            });
        }
        let request = ChatRequest {
            prompt: prompt.to_string(),
            temperature: 0.0,
            seed: None,
            sample: None,
        };
        self.with_retries("summarize", || self.backend.chat(&self.config.chat_model, &request))
    }
}

fn is_retryable(status: Option<u16>) -> bool {
    match status {
        None => true,
        Some(s) => s == 408 || s == 429 || s >= 500,
    }
}
