use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GenerationSample;

/// One cached generation. The flattened sample fields make each line a valid
/// `GenerationSample` on its own; the extra fields complete the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheLine {
    #[serde(flatten)]
    pub sample: GenerationSample,
    pub chat_model: String,
    pub prompt_hash: String,
}

/// Append-only JSONL sample store, one file per question.
#[derive(Debug)]
pub struct SampleCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

/// File name for a question id. Characters outside `[A-Za-z0-9._-]` are
/// percent-encoded so arbitrary ids map to distinct, safe names.
pub fn cache_file_name(question_id: &str) -> String {
    let mut name = String::with_capacity(question_id.len() + 6);
    for b in question_id.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'_' | b'-' => name.push(b as char),
            b'.' if !name.is_empty() => name.push('.'),
            _ => name.push_str(&format!("%{b:02X}")),
        }
    }
    name.push_str(".jsonl");
    name
}

impl SampleCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, question_id: &str) -> PathBuf {
        self.dir.join(cache_file_name(question_id))
    }

    /// All complete lines for a question. A trailing line without a newline is
    /// an in-progress append and is skipped.
    pub fn read(&self, question_id: &str) -> Result<Vec<CacheLine>> {
        let path = self.path_for(question_id);
        let content = match fs::read_to_string(&path) {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(path, e)),
        };
        let complete = match content.rfind('\n') {
            Some(end) => &content[..=end],
            None => "",
        };
        complete
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|source| Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    source,
                })
            })
            .collect()
    }

    /// Slot `i` holds the first cached sample with index `i` whose key matches.
    pub fn lookup(
        &self,
        question_id: &str,
        chat_model: &str,
        temperature: f64,
        prompt_hash: &str,
        m: usize,
    ) -> Result<Vec<Option<GenerationSample>>> {
        let mut slots = vec![None; m];
        for line in self.read(question_id)? {
            let s = &line.sample;
            if s.sample_index < m
                && slots[s.sample_index].is_none()
                && line.chat_model == chat_model
                && line.prompt_hash == prompt_hash
                && s.temperature.to_bits() == temperature.to_bits()
            {
                let index = s.sample_index;
                slots[index] = Some(line.sample);
            }
        }
        Ok(slots)
    }

    /// Appends one line under both an in-process mutex and an exclusive file
    /// lock.
    pub fn append(&self, line: &CacheLine) -> Result<()> {
        let mut encoded = serde_json::to_string(line)?;
        encoded.push('\n');
        let _guard = self.write_lock.lock();
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path_for(&line.sample.question_id);
        let mut file: File = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.lock().map_err(|e| Error::io(&path, e))?;
        let written = file.write_all(encoded.as_bytes()).and_then(|_| file.flush());
        let _ = file.unlock();
        written.map_err(|e| Error::io(&path, e))
    }
}
