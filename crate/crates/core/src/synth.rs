//! Seeded synthetic corpora that stand in for model sampling.
//!
//! The planted-fact generator gives every question a fixed set of true
//! entities, each emitted by a sample with high probability, plus
//! hallucinated entities that are specific to one sample and appear with low
//! probability. The Zipf generator draws facts with probability proportional
//! to 1/rank, which makes cluster entropy level off as samples accumulate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::normalized_edit_distance;
use crate::gateway::FixtureLine;
use crate::model::{AliasGroup, AnswerMode, QuestionRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub questions: usize,
    pub true_facts: usize,
    pub hallucinations: usize,
    pub p_true: f64,
    pub p_hallucination: f64,
    pub m: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            questions: 50,
            true_facts: 10,
            hallucinations: 20,
            p_true: 0.6,
            p_hallucination: 0.05,
            m: 20,
            seed: 1234,
        }
    }
}

/// Dataset and mock fixtures for one synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dataset: Vec<QuestionRecord>,
    pub fixtures: Vec<FixtureLine>,
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "sh", "kl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn pseudo_word(rng: &mut impl Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    let mut chars = w.chars();
    let first = chars.next().unwrap().to_ascii_uppercase();
    std::iter::once(first).chain(chars).collect()
}

/// Draws two-word names until one is at normalized edit distance at least
/// 0.5 from every name in `taken`.
fn fresh_name(rng: &mut impl Rng, taken: &[String]) -> String {
    loop {
        let name = format!("{} {}", pseudo_word(rng, 3), pseudo_word(rng, 2));
        if taken.iter().all(|t| normalized_edit_distance(t, &name) >= 0.5) {
            return name;
        }
    }
}

/// List-mode planted-fact corpus. Sample texts are comma-separated entity
/// lists in shuffled order; gold holds the true entities.
pub fn planted_fact_corpus(config: &PlantedConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dataset = Vec::new();
    let mut fixtures = Vec::new();
    for q in 0..config.questions {
        let id = format!("planted-{q:03}");
        let mut taken: Vec<String> = Vec::new();
        for _ in 0..config.true_facts {
            let name = fresh_name(&mut rng, &taken);
            taken.push(name);
        }
        let truths = taken.clone();
        for s in 0..config.m {
            let mut items: Vec<String> = truths.iter().filter(|_| rng.gen_bool(config.p_true)).cloned().collect();
            for _ in 0..config.hallucinations {
                if rng.gen_bool(config.p_hallucination) {
                    let name = fresh_name(&mut rng, &taken);
                    taken.push(name.clone());
                    items.push(name);
                }
            }
            items.shuffle(&mut rng);
            fixtures.push(FixtureLine::text(&id, s, items.join(", ")));
        }
        dataset.push(QuestionRecord {
            id,
            text: format!("Name some members of synthetic category {q}"),
            mode: AnswerMode::List,
            gold: truths.into_iter().map(|t| AliasGroup::new([t])).collect(),
        });
    }
    Corpus { dataset, fixtures }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZipfConfig {
    pub questions: usize,
    pub facts: usize,
    pub draws_per_sample: usize,
    pub m: usize,
    pub seed: u64,
}

impl Default for ZipfConfig {
    fn default() -> Self {
        Self {
            questions: 20,
            facts: 40,
            draws_per_sample: 5,
            m: 50,
            seed: 1234,
        }
    }
}

/// List-mode corpus where each sample draws facts with probability
/// proportional to 1/rank (with replacement). Gold is the top five facts.
pub fn zipf_corpus(config: &ZipfConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let weights: Vec<f64> = (1..=config.facts).map(|r| 1.0 / r as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut dataset = Vec::new();
    let mut fixtures = Vec::new();
    for q in 0..config.questions {
        let id = format!("zipf-{q:03}");
        let mut names: Vec<String> = Vec::new();
        for _ in 0..config.facts {
            let name = fresh_name(&mut rng, &names);
            names.push(name);
        }
        for s in 0..config.m {
            let items: Vec<&str> = (0..config.draws_per_sample)
                .map(|_| {
                    let mut u = rng.gen::<f64>() * total;
                    let mut pick = config.facts - 1;
                    for (i, w) in weights.iter().enumerate() {
                        if u < *w {
                            pick = i;
                            break;
                        }
                        u -= w;
                    }
                    names[pick].as_str()
                })
                .collect();
            fixtures.push(FixtureLine::text(&id, s, items.join(", ")));
        }
        dataset.push(QuestionRecord {
            id,
            text: format!("Name some items of Zipf category {q}"),
            mode: AnswerMode::List,
            gold: names.iter().take(5).map(|n| AliasGroup::new([n.clone()])).collect(),
        });
    }
    Corpus { dataset, fixtures }
}

/// Long-form corpus: each question has a few true sentences naming gold
/// entities, emitted per sample with probability `p_true`, plus one-off
/// filler sentences.
pub fn planted_long_corpus(questions: usize, m: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dataset = Vec::new();
    let mut fixtures = Vec::new();
    for q in 0..questions {
        let id = format!("long-{q:03}");
        let mut taken = Vec::new();
        let truths: Vec<String> = (0..4)
            .map(|_| {
                let n = fresh_name(&mut rng, &taken);
                taken.push(n.clone());
                n
            })
            .collect();
        let sentences: Vec<String> = truths
            .iter()
            .enumerate()
            .map(|(i, t)| format!("The answer in reading {} is {t}.", i + 1))
            .collect();
        for s in 0..m {
            let mut picked: Vec<String> = sentences.iter().filter(|_| rng.gen_bool(0.7)).cloned().collect();
            if rng.gen_bool(0.3) {
                let filler = fresh_name(&mut rng, &taken);
                picked.push(format!("Some say {filler} matters too."));
            }
            picked.shuffle(&mut rng);
            fixtures.push(FixtureLine::text(&id, s, picked.join(" ")));
        }
        dataset.push(QuestionRecord {
            id,
            text: format!("Who is meant by ambiguous question {q}?"),
            mode: AnswerMode::Long,
            gold: truths.into_iter().map(|t| AliasGroup::new([t])).collect(),
        });
    }
    Corpus { dataset, fixtures }
}
