//! Offline backend driven by a fixtures file.
//!
//! Generations come from a JSONL table keyed by `(question_id, sample_index)`.
//! Embeddings use a token-hash scheme: the text is lowercased and split into
//! maximal alphanumeric runs; each token is hashed with 64-bit FNV-1a, the
//! hash modulo the dimension picks a coordinate and the top bit picks the
//! sign (+1 when clear, -1 when set). Text without any token is hashed whole.
//! The gateway normalizes the result to unit length.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, ChatRequest};
use crate::error::{Error, Result};

/// One fixture row. `fail_status` makes the request fail with that status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureLine {
    pub question_id: String,
    pub sample_index: usize,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_status: Option<u16>,
}

impl FixtureLine {
    pub fn text(question_id: &str, sample_index: usize, text: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            sample_index,
            text: text.into(),
            fail_status: None,
        }
    }

    pub fn failing(question_id: &str, sample_index: usize, status: u16) -> Self {
        Self {
            question_id: question_id.into(),
            sample_index,
            text: String::new(),
            fail_status: Some(status),
        }
    }
}

/// What the mock returns for requests that are not sample generations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MockSummary {
    /// The `SentenceN:` values of the final prompt block, joined by spaces.
    #[default]
    EchoSentences,
    EchoLastLine,
}

pub struct MockBackend {
    fixtures: HashMap<(String, usize), FixtureLine>,
    summary: MockSummary,
    dimension: usize,
    latency: Option<Duration>,
    chat_calls: Arc<AtomicUsize>,
}

impl MockBackend {
    pub fn new(fixtures: Vec<FixtureLine>) -> Self {
        Self {
            fixtures: fixtures
                .into_iter()
                .map(|f| ((f.question_id.clone(), f.sample_index), f))
                .collect(),
            summary: MockSummary::default(),
            dimension: 16,
            latency: None,
            chat_calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::new(crate::io::read_jsonl(path)?))
    }

    pub fn with_summary(mut self, summary: MockSummary) -> Self {
        self.summary = summary;
        self
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        self.dimension = dimension.max(1);
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    /// Shared counter of chat requests received, retries included.
    pub fn chat_calls(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.chat_calls)
    }

    fn summarize(&self, prompt: &str) -> String {
        match self.summary {
            MockSummary::EchoLastLine => last_line(prompt),
            MockSummary::EchoSentences => {
                let block = prompt.rsplit("Question:").next().unwrap_or(prompt);
                let sentences: Vec<&str> = block.lines().filter_map(sentence_value).collect();
                if sentences.is_empty() {
                    last_line(prompt)
                } else {
                    sentences.join(" ")
                }
            }
        }
    }
}

fn last_line(prompt: &str) -> String {
    prompt
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .to_string()
}

fn sentence_value(line: &str) -> Option<&str> {
    let rest = line.strip_prefix("Sentence")?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    rest[digits..].strip_prefix(": ")
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Raw token-hash embedding of `text` (see module docs).
pub fn mock_embedding(text: &str, dimension: usize) -> Vec<f64> {
    let lower = text.to_lowercase();
    let mut tokens: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    let trimmed = lower.trim();
    if tokens.is_empty() {
        tokens.push(trimmed);
    }
    let mut v = vec![0.0; dimension];
    for token in tokens {
        let h = fnv1a(token.as_bytes());
        let index = (h % dimension as u64) as usize;
        v[index] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    v
}

impl Backend for MockBackend {
    fn chat(&self, _model: &str, request: &ChatRequest) -> Result<String> {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        let Some(key) = &request.sample else {
            return Ok(self.summarize(&request.prompt));
        };
        let fixture = self
            .fixtures
            .get(&(key.question_id.clone(), key.sample_index))
            .ok_or_else(|| Error::Transport {
                context: format!("question {} sample {}", key.question_id, key.sample_index),
                status: Some(404),
                message: "no mock fixture".into(),
            })?;
        match fixture.fail_status {
            Some(status) => Err(Error::Transport {
                context: format!("question {} sample {}", key.question_id, key.sample_index),
                status: Some(status),
                message: "fixture marked as failing".into(),
            }),
            None => Ok(fixture.text.clone()),
        }
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| mock_embedding(t, self.dimension)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_sentences_uses_final_block() {
        let mock = MockBackend::new(Vec::new());
        let prompt = "Question: a\nSentence1: old\nAnswer: x\n\nQuestion: b\nSentence1: One.\nSentence2: Two.\nAnswer:";
        assert_eq!(mock.summarize(prompt), "One. Two.");
    }

    #[test]
    fn hashing_is_order_insensitive_and_case_folded() {
        assert_eq!(mock_embedding("Alpha beta", 16), mock_embedding("beta ALPHA", 16));
        assert_ne!(mock_embedding("...", 16), vec![0.0; 16]);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
