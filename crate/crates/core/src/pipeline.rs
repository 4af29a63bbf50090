//! Per-question method execution on top of the gateway.

use sha2::{Digest, Sha256};

use crate::atomizer::{atomize, list_items, SentenceSplitter};
use crate::cluster::{agglomerate, cluster_by_edit_distance};
use crate::composer::{compose_list_from_facts, compose_long_from_facts, CombineTemplate};
use crate::consistency::{
    acf_filter, filter_clusters, longest_sample_select, random_cluster_select, random_sentence_select, usc_select,
};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, HttpBackend, MockBackend, SampleCache};
use crate::model::{AnswerMode, AtomicFact, ClusterSet, GenerationSample, MergedAnswer, Method, QuestionRecord};
use crate::settings::Settings;

pub const DEFAULT_GENERATE_LONG: &str = include_str!("../templates/generate_long.txt");
pub const DEFAULT_GENERATE_LIST: &str = include_str!("../templates/generate_list.txt");

/// Number of raw samples reported individually by the direct baseline.
pub const DIRECT_SEEDS: usize = 5;

pub struct Pipeline {
    pub gateway: Gateway,
    pub settings: Settings,
    pub combine: CombineTemplate,
    pub splitter: SentenceSplitter,
    generate_long: String,
    generate_list: String,
}

fn read_or(path: Option<&std::path::Path>, default: &str) -> Result<String> {
    match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e)),
        None => Ok(default.to_string()),
    }
}

impl Pipeline {
    /// Builds the gateway the settings describe: the mock backend when
    /// fixtures are given, HTTP otherwise.
    pub fn from_settings(settings: Settings) -> Result<Self> {
        let endpoint = settings.pipeline.endpoint.clone();
        let backend: Box<dyn crate::gateway::Backend> = match &settings.mock_fixtures {
            Some(path) => Box::new(MockBackend::from_file(path)?.with_dimension(settings.mock_embed_dim)),
            None => Box::new(HttpBackend::new(&endpoint)),
        };
        let gateway = Gateway::new(backend, endpoint)
            .with_cache(SampleCache::new(&settings.cache_dir))
            .with_prompt_budget(settings.prompt_budget);
        Self::with_gateway(settings, gateway)
    }

    pub fn with_gateway(settings: Settings, gateway: Gateway) -> Result<Self> {
        let combine = CombineTemplate::load(
            settings.combine_block.as_deref(),
            settings.combine_instruction.as_deref(),
            settings.combine_exemplars.as_deref(),
        )?;
        let splitter = match &settings.abbreviations {
            Some(p) => SentenceSplitter::from_list(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => SentenceSplitter::default(),
        };
        Ok(Self {
            generate_long: read_or(settings.generate_template_long.as_deref(), DEFAULT_GENERATE_LONG)?,
            generate_list: read_or(settings.generate_template_list.as_deref(), DEFAULT_GENERATE_LIST)?,
            gateway,
            settings,
            combine,
            splitter,
        })
    }

    pub fn generation_template(&self, mode: AnswerMode) -> &str {
        match mode {
            AnswerMode::Long => &self.generate_long,
            AnswerMode::List => &self.generate_list,
        }
    }

    /// Fetches (or reuses) all `m` generations for a question.
    pub fn generate(&self, question: &QuestionRecord) -> Result<Vec<GenerationSample>> {
        let p = &self.settings.pipeline;
        self.gateway.sample_generations(
            question,
            self.generation_template(question.mode),
            p.m,
            p.temperature,
            p.rng_seed,
        )
    }

    /// The `m` cached generations for a question; fails if any is missing.
    pub fn samples(&self, question: &QuestionRecord) -> Result<Vec<GenerationSample>> {
        let p = &self.settings.pipeline;
        self.gateway
            .cached_samples(question, self.generation_template(question.mode), p.m, p.temperature)
    }

    pub fn facts(&self, samples: &[GenerationSample], mode: AnswerMode) -> Vec<Vec<AtomicFact>> {
        samples.iter().map(|s| atomize(s, mode, &self.splitter)).collect()
    }

    /// Embedding clusters for sentences, edit-distance clusters for items.
    pub fn cluster(&self, mode: AnswerMode, facts: &[AtomicFact]) -> Result<ClusterSet> {
        match mode {
            AnswerMode::List => Ok(cluster_by_edit_distance(
                facts,
                self.settings.pipeline.edit_distance_threshold,
            )),
            AnswerMode::Long => {
                let texts: Vec<String> = facts.iter().map(|f| f.text.clone()).collect();
                let vectors = self.gateway.embed_texts(&texts)?;
                agglomerate(facts, &vectors, self.settings.pipeline.embed_distance_threshold)
            }
        }
    }

    /// Seed for a question's random ablations, derived from the run seed.
    pub fn question_seed(&self, question: &QuestionRecord) -> u64 {
        let digest = Sha256::digest(question.id.as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        self.settings.pipeline.rng_seed ^ u64::from_le_bytes(bytes)
    }

    fn compose(
        &self,
        question: &QuestionRecord,
        representatives: Vec<AtomicFact>,
        samples: &[GenerationSample],
        method: Method,
    ) -> Result<MergedAnswer> {
        let config = &self.settings.pipeline;
        match question.mode {
            AnswerMode::List => Ok(compose_list_from_facts(question, representatives, method, config)),
            AnswerMode::Long => compose_long_from_facts(
                &self.gateway,
                &self.combine,
                question,
                representatives,
                &samples[0],
                method,
                config,
            ),
        }
    }

    /// Answer made of one raw sample, verbatim.
    fn raw_answer(&self, question: &QuestionRecord, sample: &GenerationSample, method: Method) -> MergedAnswer {
        let facts = atomize(sample, question.mode, &self.splitter);
        let mut answer = compose_list_from_facts(question, facts, method, &self.settings.pipeline);
        if question.mode == AnswerMode::Long {
            answer.entities = None;
            answer.text = Some(sample.text.clone());
        } else {
            answer.entities = Some(list_items(&sample.text).into_iter().map(str::to_string).collect());
        }
        answer
    }

    /// ASC answer at an explicit threshold, given the question's clusters.
    pub fn asc_answer(
        &self,
        question: &QuestionRecord,
        samples: &[GenerationSample],
        cs: &ClusterSet,
        theta: usize,
    ) -> Result<MergedAnswer> {
        let reps = filter_clusters(cs, theta)
            .into_iter()
            .map(|c| c.representative)
            .collect();
        let mut answer = self.compose(question, reps, samples, Method::Asc)?;
        answer.config_snapshot.theta = theta;
        Ok(answer)
    }

    /// All answers `method` produces for one question (five for `Direct`).
    pub fn run_method(
        &self,
        question: &QuestionRecord,
        samples: &[GenerationSample],
        method: Method,
    ) -> Result<Vec<MergedAnswer>> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument(format!("no samples for {}", question.id)));
        }
        let mode = question.mode;
        let theta = self.settings.pipeline.theta;
        if method == Method::Direct {
            return Ok(samples
                .iter()
                .take(DIRECT_SEEDS)
                .map(|s| {
                    let mut a = self.raw_answer(question, s, Method::Direct);
                    a.direct_seed = Some(s.sample_index);
                    a
                })
                .collect());
        }
        if method == Method::Longest {
            let s = longest_sample_select(samples, mode)?;
            return Ok(vec![self.raw_answer(question, s, Method::Longest)]);
        }

        let per_sample = self.facts(samples, mode);
        let all_facts: Vec<AtomicFact> = per_sample.iter().flatten().cloned().collect();
        let cs = self.cluster(mode, &all_facts)?;
        let answer = match method {
            Method::Asc => self.asc_answer(question, samples, &cs, theta)?,
            Method::Usc => self.raw_answer(question, usc_select(samples, &cs)?, Method::Usc),
            Method::Acf => {
                let kept = acf_filter(&per_sample[0], &cs, theta);
                match mode {
                    AnswerMode::List => compose_list_from_facts(question, kept, Method::Acf, &self.settings.pipeline),
                    AnswerMode::Long if kept.is_empty() => {
                        let mut a = self.raw_answer(question, &samples[0], Method::Acf);
                        a.selected_representatives.clear();
                        a.fallback = true;
                        a
                    }
                    AnswerMode::Long => {
                        let mut a = compose_list_from_facts(question, kept, Method::Acf, &self.settings.pipeline);
                        a.entities = None;
                        a.text = Some(
                            a.selected_representatives
                                .iter()
                                .map(|f| f.text.as_str())
                                .collect::<Vec<_>>()
                                .join(" "),
                        );
                        a
                    }
                }
            }
            Method::RandomClusters => {
                let z = filter_clusters(&cs, theta).len();
                let picked = random_cluster_select(&cs, z, self.question_seed(question))?;
                let reps = picked.into_iter().map(|c| c.representative).collect();
                self.compose(question, reps, samples, Method::RandomClusters)?
            }
            Method::RandomSentences => {
                let z = filter_clusters(&cs, theta).len();
                let picked = random_sentence_select(&all_facts, z, self.question_seed(question))?;
                self.compose(question, picked, samples, Method::RandomSentences)?
            }
            Method::Direct | Method::Longest => unreachable!("handled above"),
        };
        Ok(vec![answer])
    }
}
