//! Building the final answer from selected representatives.
//!
//! Long-form answers go through one summarization call with a few-shot
//! combine prompt; list answers are the representative texts themselves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::model::{AtomicFact, Cluster, GenerationSample, MergedAnswer, Method, PipelineConfig, QuestionRecord};

pub const DEFAULT_BLOCK: &str = include_str!("../templates/combine_block.txt");
pub const DEFAULT_INSTRUCTION: &str = include_str!("../templates/combine_instruction.txt");
pub const DEFAULT_EXEMPLARS: &str = include_str!("../templates/combine_exemplars.json");

/// A worked example shown before the live question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    pub sentences: Vec<String>,
    pub answer: String,
}

/// Few-shot combine prompt. Each block is `block` with `{instruction}`,
/// `{question}`, `{sentences}` and `{answer}` substituted; blocks are
/// separated by a blank line and the live block stops at `Answer:`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombineTemplate {
    pub block: String,
    pub instruction: String,
    pub exemplars: Vec<Exemplar>,
}

impl Default for CombineTemplate {
    fn default() -> Self {
        Self {
            block: DEFAULT_BLOCK.trim_end().to_string(),
            instruction: DEFAULT_INSTRUCTION.trim_end().to_string(),
            exemplars: serde_json::from_str(DEFAULT_EXEMPLARS).expect("bundled exemplars parse"),
        }
    }
}

impl CombineTemplate {
    /// Loads any of the three parts from files, keeping defaults for the rest.
    pub fn load(block: Option<&Path>, instruction: Option<&Path>, exemplars: Option<&Path>) -> Result<Self> {
        let mut t = Self::default();
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        if let Some(p) = block {
            t.block = read(p)?.trim_end().to_string();
        }
        if let Some(p) = instruction {
            t.instruction = read(p)?.trim_end().to_string();
        }
        if let Some(p) = exemplars {
            t.exemplars = serde_json::from_str(&read(p)?)?;
        }
        Ok(t)
    }

    pub fn with_exemplars(mut self, exemplars: Vec<Exemplar>) -> Self {
        self.exemplars = exemplars;
        self
    }

    fn render_block(&self, question: &str, sentences: &[&str], answer: Option<&str>) -> String {
        let numbered: Vec<String> = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| format!("Sentence{}: {s}", i + 1))
            .collect();
        let rendered = self
            .block
            .replace("{instruction}", &self.instruction)
            .replace("{question}", question)
            .replace("{sentences}", &numbered.join("\n"))
            .replace("{answer}", answer.unwrap_or(""));
        rendered.trim_end().to_string()
    }

    pub fn build(&self, question: &str, representatives: &[&str]) -> Result<String> {
        if representatives.is_empty() {
            return Err(Error::InvalidArgument(
                "combine prompt needs at least one sentence".into(),
            ));
        }
        let mut blocks: Vec<String> = self
            .exemplars
            .iter()
            .map(|e| {
                let sentences: Vec<&str> = e.sentences.iter().map(String::as_str).collect();
                self.render_block(&e.question, &sentences, Some(&e.answer))
            })
            .collect();
        blocks.push(self.render_block(question, representatives, None));
        Ok(blocks.join("\n\n"))
    }
}

/// Combine prompt with the bundled block and instruction.
pub fn build_combine_prompt(question: &str, representatives: &[&str], exemplars: &[Exemplar]) -> Result<String> {
    CombineTemplate::default()
        .with_exemplars(exemplars.to_vec())
        .build(question, representatives)
}

fn snapshot(config: &PipelineConfig, question: &QuestionRecord) -> PipelineConfig {
    let mut c = config.clone();
    c.mode = Some(question.mode);
    c
}

/// Summarizes `representatives` into one answer. An empty selection falls
/// back to the raw text of `fallback` (sample 0) and sets the fallback flag.
pub fn compose_long_from_facts(
    gateway: &Gateway,
    template: &CombineTemplate,
    question: &QuestionRecord,
    representatives: Vec<AtomicFact>,
    fallback: &GenerationSample,
    method: Method,
    config: &PipelineConfig,
) -> Result<MergedAnswer> {
    let mut answer = MergedAnswer {
        question_id: question.id.clone(),
        method,
        direct_seed: None,
        text: None,
        entities: None,
        selected_representatives: Vec::new(),
        fallback: false,
        config_snapshot: snapshot(config, question),
    };
    if representatives.is_empty() {
        answer.text = Some(fallback.text.clone());
        answer.fallback = true;
        return Ok(answer);
    }
    let texts: Vec<&str> = representatives.iter().map(|f| f.text.as_str()).collect();
    let prompt = template.build(&question.text, &texts)?;
    answer.text = Some(gateway.summarize(&prompt)?);
    answer.selected_representatives = representatives;
    Ok(answer)
}

pub fn compose_long_answer(
    gateway: &Gateway,
    template: &CombineTemplate,
    question: &QuestionRecord,
    selected: &[Cluster],
    fallback: &GenerationSample,
    config: &PipelineConfig,
) -> Result<MergedAnswer> {
    let reps = selected.iter().map(|c| c.representative.clone()).collect();
    compose_long_from_facts(gateway, template, question, reps, fallback, Method::Asc, config)
}

/// Entity list made of the representative texts, in order. No model call.
pub fn compose_list_from_facts(
    question: &QuestionRecord,
    representatives: Vec<AtomicFact>,
    method: Method,
    config: &PipelineConfig,
) -> MergedAnswer {
    MergedAnswer {
        question_id: question.id.clone(),
        method,
        direct_seed: None,
        text: None,
        entities: Some(representatives.iter().map(|f| f.text.clone()).collect()),
        selected_representatives: representatives,
        fallback: false,
        config_snapshot: snapshot(config, question),
    }
}

pub fn compose_list_answer(question: &QuestionRecord, selected: &[Cluster], config: &PipelineConfig) -> MergedAnswer {
    let reps = selected.iter().map(|c| c.representative.clone()).collect();
    compose_list_from_facts(question, reps, Method::Asc, config)
}
