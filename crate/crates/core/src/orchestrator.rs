//! Dataset-level commands: generate, run, sweep, entropy, oracle and eval.
//!
//! Questions are processed with bounded parallelism; every output is sorted
//! by question id so files are byte-identical across runs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::consistency::{entropy_curve, stagnation_point};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_answer, oracle_scores, render_table, response_level_oracle};
use crate::io::{load_dataset, read_jsonl, to_jsonl, write_jsonl, write_text};
use crate::model::{metric, AnswerMode, EvalReport, MergedAnswer, Method, MetricMap, QuestionRecord};
use crate::pipeline::Pipeline;

/// Default grid of sample counts for the oracle table.
pub const DEFAULT_ORACLE_GRID: [usize; 6] = [1, 2, 5, 15, 25, 50];

/// Applies `f` to every item with at most `jobs` worker threads; results
/// keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

fn selected_questions(pipeline: &Pipeline, dataset: &Path) -> Result<Vec<QuestionRecord>> {
    let mut records = load_dataset(dataset)?;
    if let Some(mode) = pipeline.settings.pipeline.mode {
        records.retain(|r| r.mode == mode);
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateSummary {
    pub questions: usize,
    pub fetched: usize,
    pub failed: Vec<String>,
}

/// Fills the cache with `m` samples per question. Reruns fetch nothing new.
pub fn cmd_generate(pipeline: &Pipeline, dataset: &Path) -> Result<GenerateSummary> {
    let questions = selected_questions(pipeline, dataset)?;
    let before = pipeline.gateway.fetch_count();
    let outcomes = par_map(&questions, pipeline.settings.jobs, |q| {
        let r = pipeline.generate(q);
        if let Err(e) = &r {
            log::error!("{}: {e}", q.id);
        }
        r
    });
    let mut failed = Vec::new();
    let mut first_error = None;
    for (q, outcome) in questions.iter().zip(outcomes) {
        if let Err(e) = outcome {
            failed.push(q.id.clone());
            first_error.get_or_insert(e);
        }
    }
    let summary = GenerateSummary {
        questions: questions.len(),
        fetched: pipeline.gateway.fetch_count() - before,
        failed,
    };
    match first_error {
        None => Ok(summary),
        Some(e) => Err(Error::Transport {
            context: format!("generation failed for {}", summary.failed.join(", ")),
            status: match e {
                Error::Transport { status, .. } => status,
                _ => None,
            },
            message: format!("{} of {} questions incomplete", summary.failed.len(), summary.questions),
        }),
    }
}

/// Runs one method over the dataset from cached samples.
pub fn cmd_run(pipeline: &Pipeline, method: Method, dataset: &Path) -> Result<Vec<MergedAnswer>> {
    let questions = selected_questions(pipeline, dataset)?;
    let outcomes = par_map(&questions, pipeline.settings.jobs, |q| {
        let samples = pipeline.samples(q)?;
        pipeline.run_method(q, &samples, method)
    });
    let mut answers = Vec::new();
    for outcome in outcomes {
        answers.extend(outcome?);
    }
    answers.sort_by(|a, b| (&a.question_id, a.direct_seed).cmp(&(&b.question_id, b.direct_seed)));
    Ok(answers)
}

pub fn write_results(path: &Path, answers: &[MergedAnswer]) -> Result<()> {
    write_jsonl(path, answers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: usize,
    pub mode: AnswerMode,
    pub metrics: MetricMap,
}

/// ASC at every threshold in `thetas`, averaged per answer mode.
pub fn cmd_sweep(pipeline: &Pipeline, dataset: &Path, thetas: &[usize]) -> Result<Vec<SweepRow>> {
    if thetas.is_empty() {
        return Err(Error::InvalidArgument("no theta values to sweep".into()));
    }
    if thetas.contains(&0) {
        return Err(Error::InvalidArgument("theta must be at least 1".into()));
    }
    let questions = selected_questions(pipeline, dataset)?;
    let per_question = par_map(&questions, pipeline.settings.jobs, |q| -> Result<Vec<MetricMap>> {
        let samples = pipeline.samples(q)?;
        let facts: Vec<_> = pipeline.facts(&samples, q.mode).into_iter().flatten().collect();
        let cs = pipeline.cluster(q.mode, &facts)?;
        thetas
            .iter()
            .map(|&t| evaluate_answer(&pipeline.asc_answer(q, &samples, &cs, t)?, &q.gold))
            .collect()
    });
    let per_question: Vec<Vec<MetricMap>> = per_question.into_iter().collect::<Result<_>>()?;
    let modes: BTreeSet<AnswerMode> = questions.iter().map(|q| q.mode).collect();
    let mut rows = Vec::new();
    for (ti, &theta) in thetas.iter().enumerate() {
        for &mode in &modes {
            let entries: Vec<(String, MetricMap)> = questions
                .iter()
                .zip(&per_question)
                .filter(|(q, _)| q.mode == mode)
                .map(|(q, m)| (q.id.clone(), m[ti].clone()))
                .collect();
            rows.push(SweepRow {
                theta,
                mode,
                metrics: aggregate(entries)?.aggregates,
            });
        }
    }
    Ok(rows)
}

/// CSV with one column per metric; metrics missing for a mode stay empty.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let names: BTreeSet<&String> = rows.iter().flat_map(|r| r.metrics.keys()).collect();
    let mut out = String::from("theta,mode");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", r.theta, r.mode));
        for n in &names {
            out.push(',');
            if let Some(v) = r.metrics.get(*n) {
                out.push_str(&fmt(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// `(m', entropy)` points for one question.
pub type Curve = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    /// `(question_id, mode, curve)` sorted by question id.
    pub curves: Vec<(String, AnswerMode, Curve)>,
    /// `(question_id, stagnation m', m)`.
    pub stagnation: Vec<(String, usize, usize)>,
}

impl EntropyReport {
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("question_id,mode,m,entropy\n");
        for (id, mode, curve) in &self.curves {
            for (m, h) in curve {
                out.push_str(&format!("{id},{mode},{m},{}\n", fmt(*h)));
            }
        }
        out
    }

    /// Mean entropy per mode and prefix length, over questions long enough.
    pub fn mean_csv(&self) -> String {
        let mut sums: BTreeMap<(AnswerMode, usize), (f64, usize)> = BTreeMap::new();
        for (_, mode, curve) in &self.curves {
            for (m, h) in curve {
                let e = sums.entry((*mode, *m)).or_insert((0.0, 0));
                e.0 += h;
                e.1 += 1;
            }
        }
        let mut out = String::from("mode,m,mean_entropy\n");
        for ((mode, m), (sum, n)) in sums {
            out.push_str(&format!("{mode},{m},{}\n", fmt(sum / n as f64)));
        }
        out
    }

    pub fn stagnation_csv(&self) -> String {
        let mut out = String::from("question_id,mode,stagnation_m,m\n");
        for ((id, at, m), (_, mode, _)) in self.stagnation.iter().zip(&self.curves) {
            out.push_str(&format!("{id},{mode},{at},{m}\n"));
        }
        out
    }

    /// Fraction of questions whose stagnation point falls before their `m`.
    pub fn stagnated_fraction(&self) -> f64 {
        if self.stagnation.is_empty() {
            return 0.0;
        }
        let early = self.stagnation.iter().filter(|(_, at, m)| at < m).count();
        early as f64 / self.stagnation.len() as f64
    }
}

/// Entropy curves and stagnation points for every question.
pub fn cmd_entropy(pipeline: &Pipeline, dataset: &Path) -> Result<EntropyReport> {
    let questions = selected_questions(pipeline, dataset)?;
    let window = pipeline.settings.stagnation_window;
    let epsilon = pipeline.settings.stagnation_epsilon;
    let outcomes = par_map(&questions, pipeline.settings.jobs, |q| -> Result<_> {
        let samples = pipeline.samples(q)?;
        let per_sample = pipeline.facts(&samples, q.mode);
        let curve = entropy_curve(&per_sample, |facts| pipeline.cluster(q.mode, facts))?;
        let m = curve.len();
        let at = if m >= window {
            stagnation_point(&curve, window, epsilon)?
        } else {
            m
        };
        Ok((curve, at, m))
    });
    let mut report = EntropyReport {
        curves: Vec::new(),
        stagnation: Vec::new(),
    };
    for (q, outcome) in questions.iter().zip(outcomes) {
        let (curve, at, m) = outcome?;
        report.curves.push((q.id.clone(), q.mode, curve));
        report.stagnation.push((q.id.clone(), at, m));
    }
    Ok(report)
}

pub fn write_entropy(dir: &Path, report: &EntropyReport) -> Result<()> {
    write_text(&dir.join("entropy_curves.csv"), &report.curves_csv())?;
    write_text(&dir.join("entropy_mean.csv"), &report.mean_csv())?;
    write_text(&dir.join("stagnation.csv"), &report.stagnation_csv())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub mode: AnswerMode,
    pub n: usize,
    /// Per-gold-unit merge ceiling (`str_em`, or `recall` and `recall5`).
    pub oracle: MetricMap,
    /// Best single response.
    pub response_level: f64,
}

/// Oracle ceilings at each sample count, averaged per mode.
pub fn cmd_oracle(pipeline: &Pipeline, dataset: &Path, n_values: &[usize]) -> Result<Vec<OracleRow>> {
    let m = pipeline.settings.pipeline.m;
    if let Some(bad) = n_values.iter().find(|&&n| n < 1 || n > m) {
        return Err(Error::InvalidArgument(format!("n = {bad} is outside 1..={m}")));
    }
    let questions = selected_questions(pipeline, dataset)?;
    let outcomes = par_map(
        &questions,
        pipeline.settings.jobs,
        |q| -> Result<Vec<(MetricMap, f64)>> {
            let samples = pipeline.samples(q)?;
            n_values
                .iter()
                .map(|&n| {
                    Ok((
                        oracle_scores(&samples, &q.gold, q.mode, n)?,
                        response_level_oracle(&samples, &q.gold, q.mode, n)?,
                    ))
                })
                .collect()
        },
    );
    let outcomes: Vec<Vec<(MetricMap, f64)>> = outcomes.into_iter().collect::<Result<_>>()?;
    let modes: BTreeSet<AnswerMode> = questions.iter().map(|q| q.mode).collect();
    let mut rows = Vec::new();
    for &mode in &modes {
        for (ni, &n) in n_values.iter().enumerate() {
            let picked: Vec<&(MetricMap, f64)> = questions
                .iter()
                .zip(&outcomes)
                .filter(|(q, _)| q.mode == mode)
                .map(|(_, o)| &o[ni])
                .collect();
            let entries = picked
                .iter()
                .enumerate()
                .map(|(i, (map, _))| (i.to_string(), map.clone()))
                .collect();
            rows.push(OracleRow {
                mode,
                n,
                oracle: aggregate(entries)?.aggregates,
                response_level: picked.iter().map(|(_, r)| r).sum::<f64>() / picked.len() as f64,
            });
        }
    }
    Ok(rows)
}

pub fn oracle_csv(rows: &[OracleRow]) -> String {
    let mut out = String::from("mode,n,oracle_str_em,oracle_recall,oracle_recall5,response_level\n");
    for r in rows {
        let cell = |k: &str| r.oracle.get(k).map(|v| fmt(*v)).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.mode,
            r.n,
            cell(metric::STR_EM),
            cell(metric::RECALL),
            cell(metric::RECALL5),
            fmt(r.response_level)
        ));
    }
    out
}

/// One evaluated group: a method, plus the sample index for direct rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub method: Method,
    /// `Some(i)` for a direct sample, `None` otherwise.
    pub seed: Option<usize>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub groups: Vec<GroupReport>,
    /// Mean over direct samples of each aggregate metric.
    pub direct_mean: Option<MetricMap>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine<'a> {
    Question {
        method: Method,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<usize>,
        question_id: &'a str,
        metrics: &'a MetricMap,
    },
    Summary {
        method: Method,
        seed: String,
        questions: usize,
        metrics: &'a MetricMap,
    },
}

impl Evaluation {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut lines: Vec<ReportLine> = Vec::new();
        for g in &self.groups {
            for (id, metrics) in &g.report.per_question {
                lines.push(ReportLine::Question {
                    method: g.method,
                    seed: g.seed,
                    question_id: id,
                    metrics,
                });
            }
        }
        for g in &self.groups {
            lines.push(ReportLine::Summary {
                method: g.method,
                seed: g.seed.map_or_else(|| "-".to_string(), |s| s.to_string()),
                questions: g.report.per_question.len(),
                metrics: &g.report.aggregates,
            });
        }
        if let Some(mean) = &self.direct_mean {
            let questions = self
                .groups
                .iter()
                .find(|g| g.method == Method::Direct)
                .map_or(0, |g| g.report.per_question.len());
            lines.push(ReportLine::Summary {
                method: Method::Direct,
                seed: "mean".into(),
                questions,
                metrics: mean,
            });
        }
        to_jsonl(&lines)
    }

    pub fn table(&self) -> String {
        let mut names: BTreeSet<&String> = BTreeSet::new();
        for g in &self.groups {
            names.extend(g.report.aggregates.keys());
        }
        let mut headers = vec!["method".to_string(), "seed".to_string()];
        headers.extend(names.iter().map(|n| n.to_string()));
        let row = |method: Method, seed: String, metrics: &MetricMap| {
            let mut r = vec![method.to_string(), seed];
            r.extend(
                names
                    .iter()
                    .map(|n| metrics.get(*n).map(|v| format!("{v:.2}")).unwrap_or_default()),
            );
            r
        };
        let mut rows: Vec<Vec<String>> = self
            .groups
            .iter()
            .map(|g| {
                row(
                    g.method,
                    g.seed.map_or_else(|| "-".into(), |s| s.to_string()),
                    &g.report.aggregates,
                )
            })
            .collect();
        if let Some(mean) = &self.direct_mean {
            rows.push(row(Method::Direct, "mean".into(), mean));
        }
        render_table(&headers, &rows)
    }
}

/// Scores a results file against the dataset gold answers.
pub fn cmd_eval(results: &Path, dataset: &Path) -> Result<Evaluation> {
    let records = load_dataset(dataset)?;
    let answers: Vec<MergedAnswer> = read_jsonl(results)?;
    let by_id: BTreeMap<&str, &QuestionRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let unknown: BTreeSet<&str> = answers
        .iter()
        .map(|a| a.question_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Validation(format!(
            "results mention ids missing from the dataset: {}",
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    type Rows = Vec<(String, MetricMap)>;
    let mut groups: BTreeMap<(Method, Option<usize>), Rows> = BTreeMap::new();
    for a in &answers {
        let record = by_id[a.question_id.as_str()];
        if a.mode() != record.mode {
            return Err(Error::Validation(format!(
                "answer for {} is {} but the question is {}",
                a.question_id,
                a.mode(),
                record.mode
            )));
        }
        groups
            .entry((a.method, a.direct_seed))
            .or_default()
            .push((a.question_id.clone(), evaluate_answer(a, &record.gold)?));
    }
    for ((method, seed), rows) in &groups {
        let ids: BTreeSet<&str> = rows.iter().map(|(id, _)| id.as_str()).collect();
        if ids.len() != rows.len() {
            return Err(Error::Validation(format!(
                "duplicate answers for {method} seed {seed:?}"
            )));
        }
    }
    let groups: Vec<GroupReport> = groups
        .into_iter()
        .map(|((method, seed), rows)| {
            Ok(GroupReport {
                method,
                seed,
                report: aggregate(rows)?,
            })
        })
        .collect::<Result<_>>()?;
    let direct: Vec<(String, MetricMap)> = groups
        .iter()
        .filter(|g| g.method == Method::Direct)
        .map(|g| (g.seed.unwrap_or(0).to_string(), g.report.aggregates.clone()))
        .collect();
    let direct_mean = if direct.is_empty() {
        None
    } else {
        Some(aggregate(direct)?.aggregates)
    };
    Ok(Evaluation { groups, direct_mean })
}
