//! Shared data types for questions, samples, facts, clusters and merged answers.
//!
//! Everything here is plain data. Construction helpers enforce the invariants
//! that the rest of the pipeline relies on (cluster strength equals member
//! count, representative chosen by mode, and so on).

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::EndpointConfig;

/// How an answer is shaped, which also selects the metric family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AnswerMode {
    /// Free-text answer; atomic facts are sentences.
    Long,
    /// Entity list; atomic facts are list items.
    List,
}

impl fmt::Display for AnswerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerMode::Long => "long",
            AnswerMode::List => "list",
        })
    }
}

/// Aliases naming one gold answer unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliasGroup {
    pub aliases: Vec<String>,
}

impl AliasGroup {
    pub fn new<S: Into<String>>(aliases: impl IntoIterator<Item = S>) -> Self {
        Self {
            aliases: aliases.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    #[serde(rename = "question")]
    pub text: String,
    pub mode: AnswerMode,
    pub gold: Vec<AliasGroup>,
}

/// One stochastic answer drawn from the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSample {
    pub question_id: String,
    pub sample_index: usize,
    pub text: String,
    pub temperature: f64,
    pub seed: u64,
}

/// A sentence or list item together with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomicFact {
    pub text: String,
    pub sample_index: usize,
    pub position: usize,
}

impl AtomicFact {
    pub fn new(text: impl Into<String>, sample_index: usize, position: usize) -> Self {
        Self {
            text: text.into(),
            sample_index,
            position,
        }
    }

    /// Provenance key used for every ordering tie-break.
    pub fn provenance(&self) -> (usize, usize) {
        (self.sample_index, self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<AtomicFact>,
    pub strength: usize,
    pub representative: AtomicFact,
}

impl Cluster {
    /// Builds a cluster, sorting members by provenance and choosing the
    /// representative for `mode`: the longest text for long-form answers
    /// (ties to earliest provenance), the earliest member for lists.
    ///
    /// Panics if `members` is empty.
    pub fn new(mut members: Vec<AtomicFact>, mode: AnswerMode) -> Self {
        assert!(!members.is_empty(), "a cluster needs at least one member");
        members.sort_by_key(AtomicFact::provenance);
        let representative = match mode {
            AnswerMode::List => members[0].clone(),
            AnswerMode::Long => {
                let mut best = &members[0];
                for fact in &members[1..] {
                    if fact.text.chars().count() > best.text.chars().count() {
                        best = fact;
                    }
                }
                best.clone()
            }
        };
        Self {
            strength: members.len(),
            members,
            representative,
        }
    }

    pub fn contains_sample(&self, sample_index: usize) -> bool {
        self.members.iter().any(|f| f.sample_index == sample_index)
    }

    /// Earliest member provenance; clusters are listed in this order.
    pub fn first_provenance(&self) -> (usize, usize) {
        self.members
            .iter()
            .map(AtomicFact::provenance)
            .min()
            .unwrap_or((usize::MAX, usize::MAX))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub total_facts: usize,
    /// Mean number of facts per contributing sample.
    pub avg_facts_per_sample: f64,
    pub mode: AnswerMode,
}

impl ClusterSet {
    /// Orders clusters by earliest member and fills in the derived counts.
    pub fn new(mut clusters: Vec<Cluster>, mode: AnswerMode) -> Self {
        clusters.sort_by_key(Cluster::first_provenance);
        let total_facts = clusters.iter().map(|c| c.strength).sum();
        let samples: HashSet<usize> = clusters
            .iter()
            .flat_map(|c| c.members.iter().map(|f| f.sample_index))
            .collect();
        let avg_facts_per_sample = if samples.is_empty() {
            0.0
        } else {
            total_facts as f64 / samples.len() as f64
        };
        Self {
            clusters,
            total_facts,
            avg_facts_per_sample,
            mode,
        }
    }

    pub fn empty(mode: AnswerMode) -> Self {
        Self::new(Vec::new(), mode)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Index of the cluster holding the fact with this provenance.
    pub fn cluster_of(&self, fact: &AtomicFact) -> Option<usize> {
        self.clusters
            .iter()
            .position(|c| c.members.iter().any(|m| m.provenance() == fact.provenance()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub m: usize,
    pub temperature: f64,
    pub theta: usize,
    pub embed_distance_threshold: f64,
    pub edit_distance_threshold: f64,
    pub rng_seed: u64,
    pub endpoint: EndpointConfig,
    /// Restricts processing to one answer mode; `None` processes every record.
    pub mode: Option<AnswerMode>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            m: 50,
            temperature: 0.7,
            theta: 5,
            embed_distance_threshold: 0.15,
            edit_distance_threshold: 0.25,
            rng_seed: 0,
            endpoint: EndpointConfig::default(),
            mode: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.theta < 1 {
            return Err(Error::Config("theta must be at least 1".into()));
        }
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.embed_distance_threshold) {
            return Err(Error::Config(format!(
                "d must lie in (0, 1), got {}",
                self.embed_distance_threshold
            )));
        }
        if !open_unit(self.edit_distance_threshold) {
            return Err(Error::Config(format!(
                "tau must lie in (0, 1), got {}",
                self.edit_distance_threshold
            )));
        }
        self.endpoint.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    Asc,
    Usc,
    Acf,
    RandomClusters,
    RandomSentences,
    Longest,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Direct => "direct",
            Method::Asc => "asc",
            Method::Usc => "usc",
            Method::Acf => "acf",
            Method::RandomClusters => "random_clusters",
            Method::RandomSentences => "random_sentences",
            Method::Longest => "longest",
        })
    }
}

/// Final output of one method for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedAnswer {
    pub question_id: String,
    pub method: Method,
    /// Which raw sample a `Direct` row reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct_seed: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<String>>,
    pub selected_representatives: Vec<AtomicFact>,
    /// Set when an empty selection fell back to sample 0.
    #[serde(default)]
    pub fallback: bool,
    pub config_snapshot: PipelineConfig,
}

impl MergedAnswer {
    pub fn mode(&self) -> AnswerMode {
        if self.entities.is_some() {
            AnswerMode::List
        } else {
            AnswerMode::Long
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.text.is_some() == self.entities.is_some() {
            return Err(Error::Validation(format!(
                "answer for {} must carry exactly one of text or entities",
                self.question_id
            )));
        }
        Ok(())
    }
}

pub type MetricMap = BTreeMap<String, f64>;

pub mod metric {
    pub const STR_EM: &str = "str_em";
    pub const PRECISION: &str = "precision";
    pub const RECALL: &str = "recall";
    pub const RECALL5: &str = "recall5";
    pub const F1: &str = "f1";
    pub const F1_5: &str = "f1_5";
    pub const NUM_PREDICTIONS: &str = "num_predictions";
    pub const ANSWER_LENGTH: &str = "answer_length";
    pub const NUM_CLUSTERS_SELECTED: &str = "num_clusters_selected";

    /// Metrics reported as percentages.
    pub const PERCENTAGES: [&str; 6] = [STR_EM, PRECISION, RECALL, RECALL5, F1, F1_5];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_question: BTreeMap<String, MetricMap>,
    pub aggregates: MetricMap,
}

/// Checks ids are unique, questions non-empty, and every alias group has
/// at least one alias that survives normalization.
pub fn validate_dataset(records: Vec<QuestionRecord>) -> Result<Vec<QuestionRecord>> {
    let mut seen = HashSet::new();
    for r in &records {
        if r.id.is_empty() {
            return Err(Error::Validation("record with empty id".into()));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Validation(format!("duplicate id {}", r.id)));
        }
        if r.text.trim().is_empty() {
            return Err(Error::Validation(format!("empty question in {}", r.id)));
        }
        for group in &r.gold {
            if group.aliases.is_empty() {
                return Err(Error::Validation(format!("empty alias group in {}", r.id)));
            }
            if group
                .aliases
                .iter()
                .any(|a| crate::eval::normalize_answer(a).is_empty())
            {
                return Err(Error::Validation(format!("empty alias in {}", r.id)));
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, gold: Vec<Vec<&str>>) -> QuestionRecord {
        QuestionRecord {
            id: id.into(),
            text: "Who?".into(),
            mode: AnswerMode::List,
            gold: gold.into_iter().map(AliasGroup::new).collect(),
        }
    }

    #[test]
    fn valid_records_pass_through() {
        let recs = vec![record("a", vec![vec!["x"]]), record("b", vec![vec!["y", "z"]])];
        assert_eq!(validate_dataset(recs.clone()).unwrap(), recs);
    }

    #[test]
    fn duplicate_id_is_named() {
        let recs = vec![record("a", vec![vec!["x"]]), record("a", vec![vec!["y"]])];
        let err = validate_dataset(recs).unwrap_err().to_string();
        assert!(err.contains("duplicate id a"), "{err}");
    }

    #[test]
    fn empty_alias_rejected() {
        let err = validate_dataset(vec![record("q1", vec![vec![""]])])
            .unwrap_err()
            .to_string();
        assert!(err.contains("empty alias"), "{err}");
        assert!(err.contains("q1"));
    }

    #[test]
    fn empty_question_rejected() {
        let mut r = record("q", vec![vec!["x"]]);
        r.text = "  ".into();
        assert!(validate_dataset(vec![r]).is_err());
    }

    #[test]
    fn long_form_representative_is_longest_then_earliest() {
        let members = vec![
            AtomicFact::new("abc", 2, 0),
            AtomicFact::new("abcd", 3, 1),
            AtomicFact::new("wxyz", 1, 4),
        ];
        let c = Cluster::new(members, AnswerMode::Long);
        assert_eq!(c.strength, 3);
        assert_eq!(c.representative.provenance(), (1, 4));
    }

    #[test]
    fn list_representative_is_first_item() {
        let members = vec![AtomicFact::new("Berlin", 4, 0), AtomicFact::new("berlin", 1, 2)];
        let c = Cluster::new(members, AnswerMode::List);
        assert_eq!(c.representative.provenance(), (1, 2));
    }

    #[test]
    fn dataset_line_shape() {
        let line = r#"{"id":"q1","question":"Name some novels","mode":"list","gold":[["Madam"],["The Crystal Cave","Crystal Cave"]]}"#;
        let r: QuestionRecord = serde_json::from_str(line).unwrap();
        assert_eq!(r.mode, AnswerMode::List);
        assert_eq!(r.gold[1].aliases.len(), 2);
        assert_eq!(serde_json::to_string(&r).unwrap(), line);
    }

    #[test]
    fn config_bounds() {
        let mut c = PipelineConfig::default();
        assert!(c.validate().is_ok());
        c.embed_distance_threshold = 1.0;
        assert!(c.validate().is_err());
        c = PipelineConfig::default();
        c.theta = 0;
        assert!(c.validate().is_err());
    }
}
