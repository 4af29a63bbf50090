//! Answer scoring: string exact match for long-form answers, list
//! precision/recall with the capped Recall-5 variant, merge oracles, and
//! report aggregation. All scores are percentages.

use std::collections::{BTreeMap, HashSet};

use crate::atomizer::list_items;
use crate::error::{Error, Result};
use crate::model::{metric, AliasGroup, AnswerMode, EvalReport, GenerationSample, MergedAnswer, MetricMap};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn trim_edges(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation() || c.is_ascii_control())
}

/// Lowercase, trim punctuation and whitespace at both ends, collapse inner
/// whitespace and drop standalone articles. An answer made only of articles
/// keeps them.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let all: Vec<&str> = trim_edges(&lower).split_whitespace().collect();
    let words: Vec<&str> = all.iter().copied().filter(|w| !ARTICLES.contains(w)).collect();
    let words = if words.is_empty() { all } else { words };
    trim_edges(&words.join(" ")).to_string()
}

/// Whether `needle` occurs in `haystack` with no alphanumeric character
/// directly before or after it.
pub fn contains_at_boundary(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(found) = haystack[from..].find(needle) {
        let start = from + found;
        let end = start + needle.len();
        let before_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

fn group_matches_text(group: &AliasGroup, normalized_answer: &str) -> bool {
    group
        .aliases
        .iter()
        .any(|a| contains_at_boundary(normalized_answer, &normalize_answer(a)))
}

fn require_gold(gold: &[AliasGroup]) -> Result<()> {
    if gold.is_empty() {
        Err(Error::InvalidArgument("gold answer set is empty".into()))
    } else {
        Ok(())
    }
}

/// Percentage of gold groups with an alias found in the answer.
pub fn str_em(answer_text: &str, gold: &[AliasGroup]) -> Result<f64> {
    require_gold(gold)?;
    let normalized = normalize_answer(answer_text);
    let hits = gold.iter().filter(|g| group_matches_text(g, &normalized)).count();
    Ok(100.0 * hits as f64 / gold.len() as f64)
}

fn harmonic(x: f64, y: f64) -> f64 {
    if x + y == 0.0 {
        0.0
    } else {
        2.0 * x * y / (x + y)
    }
}

/// Normalized predictions with duplicates and empties removed, first
/// occurrence kept.
pub fn dedupe_predictions<S: AsRef<str>>(entities: &[S]) -> Vec<String> {
    let mut seen = HashSet::new();
    entities
        .iter()
        .map(|e| normalize_answer(e.as_ref()))
        .filter(|e| !e.is_empty() && seen.insert(e.clone()))
        .collect()
}

fn normalized_groups(gold: &[AliasGroup]) -> Vec<HashSet<String>> {
    gold.iter()
        .map(|g| g.aliases.iter().map(|a| normalize_answer(a)).collect())
        .collect()
}

/// Size of a maximum matching between predictions and gold groups where a
/// prediction may take a group it names. Predictions are tried in order
/// with augmenting paths, so when no prediction names two groups this is
/// the greedy first-match count.
fn matched_count(preds: &[String], groups: &[HashSet<String>]) -> usize {
    let edges: Vec<Vec<usize>> = preds
        .iter()
        .map(|p| (0..groups.len()).filter(|&g| groups[g].contains(p)).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; groups.len()];

    fn augment(p: usize, edges: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &g in &edges[p] {
            if seen[g] {
                continue;
            }
            seen[g] = true;
            if owner[g].is_none_or(|q| augment(q, edges, owner, seen)) {
                owner[g] = Some(p);
                return true;
            }
        }
        false
    }

    (0..preds.len())
        .filter(|&p| {
            let mut seen = vec![false; groups.len()];
            augment(p, &edges, &mut owner, &mut seen)
        })
        .count()
}

/// Precision, recall, Recall-5, F1, F1-5 and the prediction count for a
/// list answer.
pub fn list_metrics<S: AsRef<str>>(entities: &[S], gold: &[AliasGroup]) -> Result<MetricMap> {
    require_gold(gold)?;
    let preds = dedupe_predictions(entities);
    let correct = matched_count(&preds, &normalized_groups(gold)) as f64;
    let precision = if preds.is_empty() {
        0.0
    } else {
        100.0 * correct / preds.len() as f64
    };
    let recall = 100.0 * correct / gold.len() as f64;
    let recall5 = 100.0 * (correct / gold.len().min(5) as f64).min(1.0);
    Ok(MetricMap::from([
        (metric::PRECISION.to_string(), precision),
        (metric::RECALL.to_string(), recall),
        (metric::RECALL5.to_string(), recall5),
        (metric::F1.to_string(), harmonic(precision, recall)),
        (metric::F1_5.to_string(), harmonic(precision, recall5)),
        (metric::NUM_PREDICTIONS.to_string(), preds.len() as f64),
    ]))
}

fn check_n(samples: &[GenerationSample], n: usize) -> Result<()> {
    if n < 1 || n > samples.len() {
        return Err(Error::InvalidArgument(format!(
            "n = {n} is outside 1..={}",
            samples.len()
        )));
    }
    Ok(())
}

fn sample_covers(
    sample: &GenerationSample,
    group_index: usize,
    groups: &[HashSet<String>],
    gold: &[AliasGroup],
    mode: AnswerMode,
) -> bool {
    match mode {
        AnswerMode::Long => group_matches_text(&gold[group_index], &normalize_answer(&sample.text)),
        AnswerMode::List => list_items(&sample.text)
            .iter()
            .any(|item| groups[group_index].contains(&normalize_answer(item))),
    }
}

/// Merge ceiling over the first `n` samples: a gold group counts as covered
/// when any of those samples matches it. Returns `str_em` for long-form and
/// `recall`/`recall5` for lists.
pub fn oracle_scores(
    samples: &[GenerationSample],
    gold: &[AliasGroup],
    mode: AnswerMode,
    n: usize,
) -> Result<MetricMap> {
    require_gold(gold)?;
    check_n(samples, n)?;
    let groups = normalized_groups(gold);
    let covered = (0..gold.len())
        .filter(|&g| samples[..n].iter().any(|s| sample_covers(s, g, &groups, gold, mode)))
        .count() as f64;
    Ok(match mode {
        AnswerMode::Long => MetricMap::from([(metric::STR_EM.to_string(), 100.0 * covered / gold.len() as f64)]),
        AnswerMode::List => MetricMap::from([
            (metric::RECALL.to_string(), 100.0 * covered / gold.len() as f64),
            (
                metric::RECALL5.to_string(),
                100.0 * (covered / gold.len().min(5) as f64).min(1.0),
            ),
        ]),
    })
}

/// Best single response among the first `n`: `str_em` for long-form,
/// `recall` for lists.
pub fn response_level_oracle(
    samples: &[GenerationSample],
    gold: &[AliasGroup],
    mode: AnswerMode,
    n: usize,
) -> Result<f64> {
    require_gold(gold)?;
    check_n(samples, n)?;
    samples[..n].iter().try_fold(0.0f64, |best, s| {
        let score = match mode {
            AnswerMode::Long => str_em(&s.text, gold)?,
            AnswerMode::List => list_metrics(&list_items(&s.text), gold)?[metric::RECALL],
        };
        Ok(best.max(score))
    })
}

/// Every metric for one merged answer, plus length and selection size.
pub fn evaluate_answer(answer: &MergedAnswer, gold: &[AliasGroup]) -> Result<MetricMap> {
    answer.check()?;
    let mut metrics = match (&answer.text, &answer.entities) {
        (Some(text), _) => {
            let mut m = MetricMap::new();
            m.insert(metric::STR_EM.into(), str_em(text, gold)?);
            m.insert(metric::ANSWER_LENGTH.into(), text.chars().count() as f64);
            m
        }
        (None, Some(entities)) => {
            let mut m = list_metrics(entities, gold)?;
            m.insert(metric::ANSWER_LENGTH.into(), entities.join(", ").chars().count() as f64);
            m
        }
        (None, None) => unreachable!("checked above"),
    };
    metrics.insert(
        metric::NUM_CLUSTERS_SELECTED.into(),
        answer.selected_representatives.len() as f64,
    );
    Ok(metrics)
}

/// Mean of each metric over the questions that report it.
pub fn aggregate(per_question: Vec<(String, MetricMap)>) -> Result<EvalReport> {
    if per_question.is_empty() {
        return Err(Error::InvalidArgument("nothing to aggregate".into()));
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (_, metrics) in &per_question {
        for (name, value) in metrics {
            let entry = sums.entry(name.clone()).or_insert((0.0, 0));
            entry.0 += value;
            entry.1 += 1;
        }
    }
    Ok(EvalReport {
        aggregates: sums
            .into_iter()
            .map(|(name, (sum, count))| (name, sum / count as f64))
            .collect(),
        per_question: per_question.into_iter().collect(),
    })
}

/// Left-aligned first column, right-aligned numbers, two-space gutters.
pub fn render_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(headers);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(groups: &[&[&str]]) -> Vec<AliasGroup> {
        groups.iter().map(|g| AliasGroup::new(g.iter().copied())).collect()
    }

    fn sample(i: usize, text: &str) -> GenerationSample {
        GenerationSample {
            question_id: "q".into(),
            sample_index: i,
            text: text.into(),
            temperature: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The Crystal Cave "), "crystal cave");
        assert_eq!(normalize_answer("BERLIN."), "berlin");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("  A   tale of   two cities!"), "tale of two cities");
        assert_eq!(normalize_answer("Theodore"), "theodore");
        assert_eq!(normalize_answer("A"), "a");
    }

    #[test]
    fn str_em_fractions() {
        let g = gold(&[&["Berlin"], &["Auschwitz", "Oswiecim"]]);
        assert_eq!(str_em("He lived in Berlin and then Oswiecim.", &g).unwrap(), 100.0);
        assert_eq!(str_em("Bruno lived in Berlin.", &g).unwrap(), 50.0);
        assert_eq!(str_em("nothing", &g).unwrap(), 0.0);
        assert!(str_em("x", &[]).is_err());
    }

    #[test]
    fn str_em_respects_token_boundaries() {
        let g = gold(&[&["art"]]);
        assert_eq!(str_em("What a party", &g).unwrap(), 0.0);
        assert_eq!(str_em("Modern art, mostly.", &g).unwrap(), 100.0);
        assert!(contains_at_boundary("party art", "art"));
    }

    #[test]
    fn list_metrics_worked_example() {
        let g = gold(&[&["a"], &["b"], &["d"], &["e"], &["f"], &["g"]]);
        let m = list_metrics(&["a", "b", "c"], &g).unwrap();
        let close = |k: &str, v: f64| assert!((m[k] - v).abs() < 0.01, "{k} = {}", m[k]);
        close(metric::PRECISION, 66.67);
        close(metric::RECALL, 33.33);
        close(metric::RECALL5, 40.0);
        close(metric::F1, 44.44);
        close(metric::F1_5, 50.0);
    }

    #[test]
    fn list_metrics_perfect_and_empty() {
        let g = gold(&[&["a"], &["b"], &["c"], &["d"], &["e"]]);
        let m = list_metrics(&["A", "b.", "c", "d", "e"], &g).unwrap();
        for k in metric::PERCENTAGES.iter().filter(|k| **k != metric::STR_EM) {
            assert_eq!(m[*k], 100.0, "{k}");
        }
        let empty: [&str; 0] = [];
        let m = list_metrics(&empty, &g).unwrap();
        assert_eq!(
            (m[metric::PRECISION], m[metric::RECALL], m[metric::F1]),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn duplicates_and_aliases_credit_once() {
        let g = gold(&[&["New York City", "NYC"]]);
        let m = list_metrics(&["NYC", "nyc", "New York City"], &g).unwrap();
        assert_eq!(m[metric::NUM_PREDICTIONS], 2.0);
        assert_eq!(m[metric::PRECISION], 50.0);
        assert_eq!(m[metric::RECALL], 100.0);
    }

    #[test]
    fn shared_alias_uses_best_assignment() {
        // "x" names both groups, "y" only the first: both can be credited
        let g = gold(&[&["x", "y"], &["x"]]);
        let m = list_metrics(&["x", "y"], &g).unwrap();
        assert_eq!(m[metric::RECALL], 100.0);
    }

    #[test]
    fn oracle_examples() {
        let g = gold(&[&["a"], &["b"], &["c"], &["d"], &["e"]]);
        let samples: Vec<GenerationSample> = ["a", "b", "c", "d", "e"]
            .iter()
            .enumerate()
            .map(|(i, t)| sample(i, t))
            .collect();
        let full = oracle_scores(&samples, &g, AnswerMode::List, 5).unwrap();
        assert_eq!(full[metric::RECALL], 100.0);
        assert_eq!(response_level_oracle(&samples, &g, AnswerMode::List, 5).unwrap(), 20.0);
        let first = oracle_scores(&samples, &g, AnswerMode::List, 1).unwrap();
        assert_eq!(first[metric::RECALL], 20.0);
        assert!(oracle_scores(&samples, &g, AnswerMode::List, 0).is_err());
        assert!(oracle_scores(&samples, &g, AnswerMode::List, 6).is_err());
    }

    #[test]
    fn oracle_window_matters() {
        let g = gold(&[&["Lisbon"]]);
        let mut samples: Vec<GenerationSample> = (0..50).map(|i| sample(i, "Madrid.")).collect();
        samples[37].text = "Lisbon.".into();
        let at = |n| oracle_scores(&samples, &g, AnswerMode::Long, n).unwrap()[metric::STR_EM];
        assert_eq!(at(50), 100.0);
        assert_eq!(at(10), 0.0);
    }

    #[test]
    fn aggregate_means() {
        let r = aggregate(vec![
            ("a".into(), MetricMap::from([("recall".into(), 0.0)])),
            ("b".into(), MetricMap::from([("recall".into(), 100.0)])),
        ])
        .unwrap();
        assert_eq!(r.aggregates["recall"], 50.0);
        let one = aggregate(vec![("a".into(), MetricMap::from([("f1".into(), 12.5)]))]).unwrap();
        assert_eq!(one.aggregates["f1"], 12.5);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
        assert!(aggregate(vec![]).is_err());
    }

    #[test]
    fn table_alignment() {
        let t = render_table(
            &["method".into(), "f1".into()],
            &[vec!["asc".into(), "19.46".into()], vec!["direct".into(), "7.5".into()]],
        );
        assert_eq!(t, "method     f1\n------  -----\nasc     19.46\ndirect    7.5\n");
    }
}
