//! Run settings: defaults, then a flat `key = value` config file, then
//! command-line flags.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gateway::API_KEY_ENV;
use crate::model::{AnswerMode, PipelineConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub jobs: usize,
    pub cache_dir: PathBuf,
    pub mock_fixtures: Option<PathBuf>,
    pub mock_embed_dim: usize,
    pub generate_template_long: Option<PathBuf>,
    pub generate_template_list: Option<PathBuf>,
    pub combine_block: Option<PathBuf>,
    pub combine_instruction: Option<PathBuf>,
    pub combine_exemplars: Option<PathBuf>,
    pub abbreviations: Option<PathBuf>,
    pub prompt_budget: usize,
    pub stagnation_window: usize,
    pub stagnation_epsilon: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            jobs: 4,
            cache_dir: PathBuf::from("cache"),
            mock_fixtures: None,
            mock_embed_dim: 16,
            generate_template_long: None,
            generate_template_list: None,
            combine_block: None,
            combine_instruction: None,
            combine_exemplars: None,
            abbreviations: None,
            prompt_budget: 100_000,
            stagnation_window: 5,
            stagnation_epsilon: 0.01,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

impl Settings {
    /// Applies one setting. Keys use the long flag names with `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let p = &mut self.pipeline;
        match key.as_str() {
            "m" => p.m = parse(&key, value)?,
            "theta" => p.theta = parse(&key, value)?,
            "d" => p.embed_distance_threshold = parse(&key, value)?,
            "tau" => p.edit_distance_threshold = parse(&key, value)?,
            "temperature" => p.temperature = parse(&key, value)?,
            "seed" => p.rng_seed = parse(&key, value)?,
            "mode" => {
                p.mode = match value {
                    "long" => Some(AnswerMode::Long),
                    "list" => Some(AnswerMode::List),
                    "all" | "" => None,
                    _ => return Err(Error::Config(format!("unknown mode {value:?}"))),
                }
            }
            "base_url" => p.endpoint.base_url = value.to_string(),
            "chat_model" => p.endpoint.chat_model = value.to_string(),
            "embed_model" => p.endpoint.embed_model = value.to_string(),
            "max_concurrency" => p.endpoint.max_concurrency = parse(&key, value)?,
            "timeout" => p.endpoint.timeout_secs = parse(&key, value)?,
            "max_retries" => p.endpoint.max_retries = parse(&key, value)?,
            "jobs" => self.jobs = parse(&key, value)?,
            "cache_dir" => self.cache_dir = PathBuf::from(value),
            "mock_fixtures" => self.mock_fixtures = Some(PathBuf::from(value)),
            "mock_embed_dim" => self.mock_embed_dim = parse(&key, value)?,
            "generate_template_long" => self.generate_template_long = Some(PathBuf::from(value)),
            "generate_template_list" => self.generate_template_list = Some(PathBuf::from(value)),
            "combine_block" => self.combine_block = Some(PathBuf::from(value)),
            "combine_instruction" => self.combine_instruction = Some(PathBuf::from(value)),
            "combine_exemplars" => self.combine_exemplars = Some(PathBuf::from(value)),
            "abbreviations" => self.abbreviations = Some(PathBuf::from(value)),
            "prompt_budget" => self.prompt_budget = parse(&key, value)?,
            "window" => self.stagnation_window = parse(&key, value)?,
            "epsilon" => self.stagnation_epsilon = parse(&key, value)?,
            _ => return Err(Error::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Reads the API key from the environment and validates everything.
    pub fn finish(mut self) -> Result<Self> {
        if self.pipeline.endpoint.api_key.is_none() {
            self.pipeline.endpoint.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        if self.jobs < 1 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.stagnation_window < 2 {
            return Err(Error::Config("window must be at least 2".into()));
        }
        self.pipeline.validate()?;
        Ok(self)
    }
}
