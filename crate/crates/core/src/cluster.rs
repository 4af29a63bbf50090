//! Grouping facts that say the same thing.
//!
//! Long-form sentences are clustered by average-linkage agglomeration over
//! cosine distance between embeddings. List items are clustered by the
//! transitive closure of "normalized edit distance below tau".

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::gateway::EmbeddingVector;
use crate::model::{AnswerMode, AtomicFact, Cluster, ClusterSet};

/// `1 - a·b` for unit vectors, clamped to `[0, 2]`; exactly 0 for equal vectors.
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    if a.values == b.values {
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

/// Candidate merge. Ordered so that a max-heap pops the smallest distance
/// first, then the lexicographically smallest pair of creation indices.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f64,
    low: usize,
    high: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .distance
            .total_cmp(&self.distance)
            .then_with(|| other.low.cmp(&self.low))
            .then_with(|| other.high.cmp(&self.high))
    }
}

/// Average-linkage agglomerative clustering with a distance threshold.
///
/// Repeatedly merges the pair of clusters with the smallest mean pairwise
/// cosine distance while that distance is below `d`. Clusters are numbered
/// in creation order (inputs `0..n`, then each merge result), and ties go to
/// the pair with the smallest `(min index, max index)`.
pub fn agglomerate(facts: &[AtomicFact], vectors: &[EmbeddingVector], d: f64) -> Result<ClusterSet> {
    if facts.len() != vectors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} facts but {} vectors",
            facts.len(),
            vectors.len()
        )));
    }
    let n = facts.len();
    if n == 0 {
        return Ok(ClusterSet::empty(AnswerMode::Long));
    }
    if let Some(v) = vectors.iter().find(|v| v.dimension() != vectors[0].dimension()) {
        return Err(Error::DimensionMismatch {
            expected: vectors[0].dimension(),
            actual: v.dimension(),
        });
    }

    // Slot-indexed state: slot s holds the cluster with creation index id[s].
    // sums[s][t] is the total pairwise distance between members of s and t.
    let mut sums = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = cosine_distance(&vectors[i], &vectors[j])?;
            sums[i][j] = dist;
            sums[j][i] = dist;
        }
    }
    let mut id: Vec<usize> = (0..n).collect();
    let mut slot_of: Vec<usize> = (0..n).chain(std::iter::repeat_n(usize::MAX, n)).collect();
    let mut alive = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut next_id = n;

    let mut heap = BinaryHeap::new();
    for (i, row) in sums.iter().enumerate() {
        for (j, &distance) in row.iter().enumerate().skip(i + 1) {
            if distance < d {
                heap.push(Candidate {
                    distance,
                    low: i,
                    high: j,
                });
            }
        }
    }

    while let Some(c) = heap.pop() {
        let (a, b) = (slot_of[c.low], slot_of[c.high]);
        if a == usize::MAX || b == usize::MAX || !alive[a] || !alive[b] || id[a] != c.low || id[b] != c.high {
            continue;
        }
        // merge b into a; a takes a new creation index
        alive[b] = false;
        slot_of[c.low] = usize::MAX;
        slot_of[c.high] = usize::MAX;
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        id[a] = next_id;
        slot_of[next_id] = a;
        next_id += 1;
        let size_a = members[a].len();
        for t in 0..n {
            if t == a || !alive[t] {
                continue;
            }
            let total = sums[a][t] + sums[b][t];
            sums[a][t] = total;
            sums[t][a] = total;
            let mean = total / (size_a * members[t].len()) as f64;
            if mean < d {
                heap.push(Candidate {
                    distance: mean,
                    low: id[t].min(id[a]),
                    high: id[t].max(id[a]),
                });
            }
        }
    }

    let clusters = (0..n)
        .filter(|&s| alive[s])
        .map(|s| Cluster::new(members[s].iter().map(|&i| facts[i].clone()).collect(), AnswerMode::Long))
        .collect();
    Ok(ClusterSet::new(clusters, AnswerMode::Long))
}

/// Lowercase, trim and collapse internal whitespace.
fn surface_form(s: &str) -> Vec<char> {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .chars()
        .collect()
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diagonal = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitute = diagonal + usize::from(ca != cb);
            diagonal = row[j + 1];
            row[j + 1] = substitute.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

fn normalized_chars(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    levenshtein_chars(a, b) as f64 / longest as f64
}

/// Levenshtein distance of the surface forms divided by the longer length;
/// 0 when both are empty.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    normalized_chars(&surface_form(a), &surface_form(b))
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }

    /// Groups of indices, each sorted, ordered by smallest member.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = self.find(i);
            by_root[r].push(i);
        }
        let mut groups: Vec<Vec<usize>> = by_root.into_iter().filter(|g| !g.is_empty()).collect();
        groups.sort_by_key(|g| g[0]);
        groups
    }
}

/// Single-linkage clustering of list items: two items share a cluster iff a
/// chain of pairs with normalized edit distance below `tau` connects them.
pub fn cluster_by_edit_distance(items: &[AtomicFact], tau: f64) -> ClusterSet {
    let forms: Vec<Vec<char>> = items.iter().map(|f| surface_form(&f.text)).collect();
    let mut uf = UnionFind::new(items.len());
    for i in 0..items.len() {
        for j in (i + 1)..items.len() {
            if uf.find(i) == uf.find(j) {
                continue;
            }
            if forms[i] == forms[j] {
                uf.union(i, j);
                continue;
            }
            // the distance is at least the length difference over the longer length
            let (la, lb) = (forms[i].len(), forms[j].len());
            if la.abs_diff(lb) as f64 / la.max(lb) as f64 >= tau {
                continue;
            }
            if normalized_chars(&forms[i], &forms[j]) < tau {
                uf.union(i, j);
            }
        }
    }
    let clusters = uf
        .groups()
        .into_iter()
        .map(|g| Cluster::new(g.into_iter().map(|i| items[i].clone()).collect(), AnswerMode::List))
        .collect();
    ClusterSet::new(clusters, AnswerMode::List)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(v.to_vec())
    }

    fn facts(texts: &[&str]) -> Vec<AtomicFact> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| AtomicFact::new(*t, i, 0))
            .collect()
    }

    #[test]
    fn cosine_examples() {
        let x = unit(&[1.0, 0.0]);
        assert_eq!(cosine_distance(&x, &x).unwrap(), 0.0);
        assert!((cosine_distance(&x, &unit(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_distance(&unit(&[0.6, 0.8]), &x).unwrap() - 0.4).abs() < 1e-12);
        assert!(cosine_distance(&x, &unit(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn singleton_and_identical() {
        let one = agglomerate(&facts(&["a"]), &[unit(&[1.0, 0.0])], 0.15).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.clusters[0].strength, 1);

        let v = unit(&[0.3, 0.7]);
        let two = agglomerate(&facts(&["same", "same"]), &[v.clone(), v], 0.15).unwrap();
        assert_eq!(two.len(), 1);
        assert_eq!(two.clusters[0].strength, 2);
    }

    #[test]
    fn empty_input_is_empty_set() {
        let cs = agglomerate(&[], &[], 0.15).unwrap();
        assert!(cs.is_empty());
        assert_eq!(cs.total_facts, 0);
    }

    #[test]
    fn mismatched_lengths_and_dimensions() {
        assert!(agglomerate(&facts(&["a"]), &[], 0.1).is_err());
        let r = agglomerate(&facts(&["a", "b"]), &[unit(&[1.0]), unit(&[1.0, 0.0])], 0.1);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn average_linkage_blocks_chaining() {
        // a-b close, b-c close, a-c far: average linkage keeps c out
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[(0.25f64).cos(), (0.25f64).sin()]);
        let c = unit(&[(0.5f64).cos(), (0.5f64).sin()]);
        let cs = agglomerate(&facts(&["a", "b", "c"]), &[a, b, c], 0.04).unwrap();
        let sizes: Vec<usize> = cs.clusters.iter().map(|c| c.strength).collect();
        assert_eq!(sizes, vec![2, 1]);
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(normalized_edit_distance("Berlin", "berlin"), 0.0);
        assert!((normalized_edit_distance("kitten", "sitting") - 3.0 / 7.0).abs() < 1e-12);
        assert_eq!(normalized_edit_distance("", "abc"), 1.0);
        assert_eq!(normalized_edit_distance("  ", ""), 0.0);
        assert_eq!(normalized_edit_distance("New   York ", "new york"), 0.0);
    }

    #[test]
    fn edit_clusters() {
        let cs = cluster_by_edit_distance(&facts(&["A", "A", "B"]), 0.25);
        let sizes: Vec<usize> = cs.clusters.iter().map(|c| c.strength).collect();
        assert_eq!(sizes, vec![2, 1]);

        let cs = cluster_by_edit_distance(&facts(&["abcd", "abce", "zzzz"]), 0.3);
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.clusters[0].strength, 2);
        assert_eq!(cs.clusters[0].representative.text, "abcd");
    }

    #[test]
    fn edit_clusters_chain_transitively() {
        // ab~ac and ac~bc at 0.5 < 0.6 but ab vs bc is 1.0
        let cs = cluster_by_edit_distance(&facts(&["ab", "bc", "ac"]), 0.6);
        assert_eq!(cs.len(), 1);
    }
}
