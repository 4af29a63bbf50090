//! Selection rules driven by cluster strength: the threshold filter, USC and
//! ACF baselines, random ablations, and the entropy-based sampling budget.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::atomizer::list_items;
use crate::error::{Error, Result};
use crate::model::{AnswerMode, AtomicFact, Cluster, ClusterSet, GenerationSample};

/// Clusters with strength at least `theta`, strongest first, ties by the
/// representative's provenance.
pub fn filter_clusters(cs: &ClusterSet, theta: usize) -> Vec<Cluster> {
    let mut kept: Vec<Cluster> = cs.clusters.iter().filter(|c| c.strength >= theta).cloned().collect();
    kept.sort_by(|a, b| {
        b.strength
            .cmp(&a.strength)
            .then_with(|| a.representative.provenance().cmp(&b.representative.provenance()))
    });
    kept
}

/// Rescales a threshold tuned at 50 samples to `m` samples, rounding half up
/// and never going below 1.
pub fn scale_theta(theta_at_50: usize, m: usize) -> usize {
    ((2 * theta_at_50 * m + 50) / 100).max(1)
}

/// Shannon entropy (nats) of the distribution that weights each cluster by
/// its strength.
pub fn cluster_entropy(cs: &ClusterSet) -> Result<f64> {
    if cs.is_empty() || cs.total_facts == 0 {
        return Err(Error::InvalidArgument("entropy of an empty cluster set".into()));
    }
    let total = cs.total_facts as f64;
    Ok(cs
        .clusters
        .iter()
        .map(|c| {
            let p = c.strength as f64 / total;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Entropy after each prefix of the samples: point `m'` re-clusters the facts
/// of the first `m'` samples. Prefixes that yield no facts record 0.
pub fn entropy_curve<F>(facts_per_sample: &[Vec<AtomicFact>], mut cluster: F) -> Result<Vec<(usize, f64)>>
where
    F: FnMut(&[AtomicFact]) -> Result<ClusterSet>,
{
    let mut pool = Vec::new();
    let mut curve = Vec::with_capacity(facts_per_sample.len());
    for (i, facts) in facts_per_sample.iter().enumerate() {
        pool.extend(facts.iter().cloned());
        let cs = cluster(&pool)?;
        let h = if cs.is_empty() { 0.0 } else { cluster_entropy(&cs)? };
        curve.push((i + 1, h));
    }
    Ok(curve)
}

/// First `m'` whose entropy changed by less than `epsilon` (relative) over the
/// trailing `window` points; the final `m'` if that never happens.
pub fn stagnation_point(curve: &[(usize, f64)], window: usize, epsilon: f64) -> Result<usize> {
    if window < 2 {
        return Err(Error::InvalidArgument("stagnation window must be at least 2".into()));
    }
    if curve.len() < window {
        return Err(Error::InvalidArgument(format!(
            "curve of length {} is shorter than the window {window}",
            curve.len()
        )));
    }
    for idx in window..curve.len() {
        let (m, h) = curve[idx];
        let prev = curve[idx - window].1;
        if (h - prev).abs() / h.max(1e-9) < epsilon {
            return Ok(m);
        }
    }
    Ok(curve[curve.len() - 1].0)
}

/// Universal self-consistency by cluster strength: each sample scores the
/// summed strength of the distinct clusters it contributes to; the best
/// score wins, ties to the smallest sample index.
pub fn usc_select<'a>(samples: &'a [GenerationSample], cs: &ClusterSet) -> Result<&'a GenerationSample> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to select from".into()));
    }
    let scores = usc_scores(samples, cs);
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] || (*s == scores[best] && samples[i].sample_index < samples[best].sample_index) {
            best = i;
        }
    }
    Ok(&samples[best])
}

/// Score of each sample, aligned with `samples`.
pub fn usc_scores(samples: &[GenerationSample], cs: &ClusterSet) -> Vec<usize> {
    samples
        .iter()
        .map(|s| {
            cs.clusters
                .iter()
                .filter(|c| c.contains_sample(s.sample_index))
                .map(|c| c.strength)
                .sum()
        })
        .collect()
}

/// Facts of the first sample whose cluster (built from all samples) reaches
/// `theta`, in their original order.
pub fn acf_filter(first_sample_facts: &[AtomicFact], cs: &ClusterSet, theta: usize) -> Vec<AtomicFact> {
    let mut kept: Vec<AtomicFact> = first_sample_facts
        .iter()
        .filter(|f| cs.cluster_of(f).is_some_and(|i| cs.clusters[i].strength >= theta))
        .cloned()
        .collect();
    kept.sort_by_key(|f| f.position);
    kept
}

fn take_random<T: Clone>(pool: &[T], z: usize, rng_seed: u64, what: &str) -> Result<Vec<T>> {
    if z > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {z} {what} from {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(pool.choose_multiple(&mut rng, z).cloned().collect())
}

/// `z` clusters drawn uniformly without replacement.
pub fn random_cluster_select(cs: &ClusterSet, z: usize, rng_seed: u64) -> Result<Vec<Cluster>> {
    take_random(&cs.clusters, z, rng_seed, "clusters")
}

/// `z` raw facts drawn uniformly without replacement.
pub fn random_sentence_select(facts: &[AtomicFact], z: usize, rng_seed: u64) -> Result<Vec<AtomicFact>> {
    take_random(facts, z, rng_seed, "facts")
}

/// Longest sample: most characters for long-form, most parsed items for
/// lists. Ties go to the smallest sample index.
pub fn longest_sample_select(samples: &[GenerationSample], mode: AnswerMode) -> Result<&GenerationSample> {
    let size = |s: &GenerationSample| match mode {
        AnswerMode::Long => s.text.chars().count(),
        AnswerMode::List => list_items(&s.text).len(),
    };
    samples
        .iter()
        .max_by(|a, b| size(a).cmp(&size(b)).then_with(|| b.sample_index.cmp(&a.sample_index)))
        .ok_or_else(|| Error::InvalidArgument("no samples to select from".into()))
}

/// Sample indices that contribute to at least one cluster.
pub fn contributing_samples(cs: &ClusterSet) -> BTreeSet<usize> {
    cs.clusters
        .iter()
        .flat_map(|c| c.members.iter().map(|f| f.sample_index))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds a cluster set from per-cluster lists of contributing samples.
    fn clusters(layout: &[&[usize]]) -> ClusterSet {
        let mut position = vec![0usize; 64];
        let cs = layout
            .iter()
            .map(|samples| {
                let members = samples
                    .iter()
                    .map(|&s| {
                        position[s] += 1;
                        AtomicFact::new(format!("f{s}-{}", position[s]), s, position[s] - 1)
                    })
                    .collect();
                Cluster::new(members, AnswerMode::List)
            })
            .collect();
        ClusterSet::new(cs, AnswerMode::List)
    }

    fn strengths(cs: &[Cluster]) -> Vec<usize> {
        cs.iter().map(|c| c.strength).collect()
    }

    fn sample(i: usize, text: &str) -> GenerationSample {
        GenerationSample {
            question_id: "q".into(),
            sample_index: i,
            text: text.into(),
            temperature: 1.0,
            seed: i as u64,
        }
    }

    #[test]
    fn filter_examples() {
        let cs = clusters(&[&[0, 1], &[0, 1, 2, 3, 4, 5, 6], &[0], &[1, 2, 3, 4, 5]]);
        assert_eq!(strengths(&filter_clusters(&cs, 3)), vec![7, 5]);
        assert_eq!(filter_clusters(&cs, 1).len(), 4);
        assert!(filter_clusters(&cs, 8).is_empty());
    }

    #[test]
    fn scale_examples() {
        assert_eq!(scale_theta(10, 25), 5);
        assert_eq!(scale_theta(10, 50), 10);
        assert_eq!(scale_theta(10, 7), 1);
        assert_eq!(scale_theta(6, 20), 2);
        // 2.5 rounds up
        assert_eq!(scale_theta(5, 25), 3);
        assert_eq!(scale_theta(1, 1), 1);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(cluster_entropy(&clusters(&[&[0, 1, 2]])).unwrap(), 0.0);
        let two = cluster_entropy(&clusters(&[&[0], &[1]])).unwrap();
        assert!((two - std::f64::consts::LN_2).abs() < 1e-12);
        let h = cluster_entropy(&clusters(&[&[0, 1], &[0], &[1]])).unwrap();
        let expected = -(0.5f64 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((h - expected).abs() < 1e-12);
        assert!((h - 1.0397).abs() < 1e-4);
        assert!(cluster_entropy(&ClusterSet::empty(AnswerMode::List)).is_err());
    }

    #[test]
    fn stagnation_examples() {
        let flat: Vec<(usize, f64)> = (1..=10).map(|m| (m, 1.0)).collect();
        assert_eq!(stagnation_point(&flat, 3, 0.01).unwrap(), 4);
        let linear: Vec<(usize, f64)> = (1..=10).map(|m| (m, 0.1 * m as f64)).collect();
        assert_eq!(stagnation_point(&linear, 3, 0.01).unwrap(), 10);
        assert!(stagnation_point(&flat[..2], 3, 0.01).is_err());
        assert!(stagnation_point(&flat, 1, 0.01).is_err());
    }

    #[test]
    fn entropy_curve_first_point_is_ln_k() {
        let facts = vec![(0..4)
            .map(|p| AtomicFact::new(format!("x{p}"), 0, p))
            .collect::<Vec<_>>()];
        let curve = entropy_curve(&facts, |f| Ok(crate::cluster::cluster_by_edit_distance(f, 0.25))).unwrap();
        assert_eq!(curve.len(), 1);
        assert!((curve[0].1 - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn usc_toy_instance() {
        let samples = vec![sample(0, "a"), sample(1, "b"), sample(2, "c")];
        let cs = clusters(&[&[0, 1], &[0], &[2]]);
        assert_eq!(usc_scores(&samples, &cs), vec![3, 2, 1]);
        assert_eq!(usc_select(&samples, &cs).unwrap().sample_index, 0);
        assert_eq!(usc_select(&samples[..1], &cs).unwrap().sample_index, 0);
        assert!(usc_select(&[], &cs).is_err());
    }

    #[test]
    fn usc_counts_a_cluster_once_per_sample() {
        let samples = vec![sample(0, "a"), sample(1, "b")];
        let dup = clusters(&[&[0, 0, 1]]);
        // sample 0 contributes two members to one cluster of strength 3
        assert_eq!(usc_scores(&samples, &dup), vec![3, 3]);
    }

    #[test]
    fn acf_examples() {
        let cs = clusters(&[&[0, 1, 2, 3, 4], &[0], &[0, 1, 2]]);
        let first: Vec<AtomicFact> = cs
            .clusters
            .iter()
            .flat_map(|c| c.members.iter().filter(|f| f.sample_index == 0).cloned())
            .collect();
        let kept = acf_filter(&first, &cs, 3);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].position, 0);
        assert_eq!(kept[1].position, 2);
        assert_eq!(acf_filter(&first, &cs, 1).len(), 3);
        let single = clusters(&[&[0]]);
        assert!(acf_filter(&single.clusters[0].members, &single, 2).is_empty());
    }

    #[test]
    fn random_selection() {
        let cs = clusters(&[&[0], &[1], &[2], &[3]]);
        let all = random_cluster_select(&cs, 4, 9).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(
            random_cluster_select(&cs, 2, 9).unwrap(),
            random_cluster_select(&cs, 2, 9).unwrap()
        );
        assert!(random_cluster_select(&cs, 0, 9).unwrap().is_empty());
        assert!(random_cluster_select(&cs, 5, 9).is_err());

        let facts: Vec<AtomicFact> = (0..10).map(|i| AtomicFact::new(format!("{i}"), i, 0)).collect();
        let three = random_sentence_select(&facts, 3, 1).unwrap();
        assert_eq!(three.iter().collect::<std::collections::HashSet<_>>().len(), 3);
        let perm = random_sentence_select(&facts, 10, 1).unwrap();
        let mut sorted = perm.clone();
        sorted.sort_by_key(|f| f.sample_index);
        assert_eq!(sorted, facts);
    }

    #[test]
    fn longest_examples() {
        let s = vec![
            sample(0, &"x".repeat(10)),
            sample(1, &"y".repeat(99)),
            sample(2, &"z".repeat(99)),
        ];
        assert_eq!(longest_sample_select(&s, AnswerMode::Long).unwrap().sample_index, 1);
        assert_eq!(
            longest_sample_select(&s[..1], AnswerMode::Long).unwrap().sample_index,
            0
        );
        let l = vec![sample(0, "a,b,c,d"), sample(1, "a,b,c,d,e,f,g"), sample(2, "a,b")];
        assert_eq!(longest_sample_select(&l, AnswerMode::List).unwrap().sample_index, 1);
    }
}
