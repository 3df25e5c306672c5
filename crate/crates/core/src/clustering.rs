//! Cosine similarity on logit vectors and single-linkage grouping to a
//! similarity threshold.
//!
//! Two candidates are equivalent when their cosine similarity is strictly
//! greater than the threshold. Equivalence is not transitive, so clusters are
//! the connected components of the graph whose edges are equivalent pairs.
//! The result depends only on the candidate set, never on input order.

use serde::Serialize;

use crate::error::SimilarityError;
use crate::model::{CandidateItem, ClusterSet, ItemId, LogitVector, SemanticCluster};

/// Cosine of the angle between two logit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &LogitVector, b: &LogitVector) -> Result<f64, SimilarityError> {
    if a.dim() != b.dim() {
        return Err(SimilarityError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn equivalent(a: &CandidateItem, b: &CandidateItem, sim_threshold: f64) -> Result<bool, SimilarityError> {
    Ok(cosine_similarity(&a.logits, &b.logits)? > sim_threshold)
}

/// Symmetric pairwise similarity matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityMatrix {
    ids: Vec<ItemId>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn compute(items: &[CandidateItem]) -> Result<Self, SimilarityError> {
        let n = items.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
            for j in (i + 1)..n {
                let s = cosine_similarity(&items[i].logits, &items[j].logits)?;
                values[i * n + j] = s;
                values[j * n + i] = s;
            }
        }
        Ok(SimilarityMatrix {
            ids: items.iter().map(|c| c.id.clone()).collect(),
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        self.values.chunks(n.max(1)).take(n).map(<[f64]>::to_vec).collect()
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Builds a cluster set from groups of item indices. Members are sorted by id,
/// clusters by their smallest member id, and each mass is the sum of member
/// probabilities. Entropy is left at zero.
pub(crate) fn clusters_from_groups(items: &[CandidateItem], groups: Vec<Vec<usize>>) -> ClusterSet {
    let mut clusters: Vec<SemanticCluster> = groups
        .into_iter()
        .map(|g| {
            let mut members: Vec<CandidateItem> = g.into_iter().map(|i| items[i].clone()).collect();
            members.sort_by(|a, b| a.id.cmp(&b.id));
            let mass = members.iter().map(|m| m.prob).sum();
            SemanticCluster { members, mass }
        })
        .collect();
    clusters.sort_by(|a, b| a.members[0].id.cmp(&b.members[0].id));
    ClusterSet { clusters, entropy: 0.0 }
}

/// Partitions `items` into connected components of the thresholded
/// similarity graph.
pub fn cluster_candidates(items: &[CandidateItem], sim_threshold: f64) -> Result<ClusterSet, SimilarityError> {
    let n = items.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if equivalent(&items[i], &items[j], sim_threshold)? {
                uf.union(i, j);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = uf.find(i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[r]].push(i);
    }
    Ok(clusters_from_groups(items, groups))
}

/// One cluster per item, used when clustering is switched off.
pub fn singleton_clusters(items: &[CandidateItem]) -> ClusterSet {
    clusters_from_groups(items, (0..items.len()).map(|i| vec![i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn item(id: &str, logits: Vec<f64>) -> CandidateItem {
        CandidateItem::new(id, logits, 0.1)
    }

    // Lower-triangular Cholesky factor rows of a Gram matrix: vectors whose
    // pairwise dot products reproduce the matrix.
    fn vectors_with_gram(g: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = g.len();
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    l[i][j] = (g[i][i] - s).sqrt();
                } else {
                    l[i][j] = (g[i][j] - s) / l[j][j];
                }
            }
        }
        l
    }

    fn partition(cs: &ClusterSet) -> BTreeSet<BTreeSet<String>> {
        cs.clusters
            .iter()
            .map(|c| c.members.iter().map(|m| m.id.to_string()).collect())
            .collect()
    }

    #[test]
    fn cosine_examples() {
        let v = |x: &[f64]| LogitVector::new(x.to_vec());
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        // 1 / sqrt(2)
        let expected = 1.0 / 2f64.sqrt();
        let got = cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.707_106_781_186_547_5).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        let v = |x: &[f64]| LogitVector::new(x.to_vec());
        assert_eq!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0])),
            Err(SimilarityError::DimensionMismatch(2, 1))
        );
        assert_eq!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(SimilarityError::ZeroNorm)
        );
    }

    #[test]
    fn threshold_is_strict() {
        let g = vec![vec![1.0, 0.9], vec![0.9, 1.0]];
        let v = vectors_with_gram(&g);
        let (a, b) = (item("a", v[0].clone()), item("b", v[1].clone()));
        assert!(equivalent(&a, &b, 0.8).unwrap());
        // sim == threshold is not an edge
        let c = item("c", vec![1.0, 0.0]);
        let d = item("d", vec![0.0, 1.0]);
        assert!(!equivalent(&c, &d, 0.0).unwrap());
        let e = item("e", vec![3.0, -2.0, 0.5]);
        let f = item("f", vec![3.0, -2.0, 0.5]);
        assert!(equivalent(&e, &f, 0.999).unwrap());
        assert!(!equivalent(&e, &f, 1.0).unwrap());
    }

    #[test]
    fn no_edges_gives_singletons() {
        let items = vec![
            item("a", vec![1.0, 0.0, 0.0]),
            item("b", vec![0.0, 1.0, 0.0]),
            item("c", vec![0.0, 0.0, 1.0]),
        ];
        let cs = cluster_candidates(&items, 0.5).unwrap();
        assert_eq!(cs.len(), 3);
    }

    #[test]
    fn chain_merges_through_middle_item() {
        let g = vec![vec![1.0, 0.9, 0.6], vec![0.9, 1.0, 0.85], vec![0.6, 0.85, 1.0]];
        let v = vectors_with_gram(&g);
        let items: Vec<_> = ["a", "b", "c"].iter().zip(v).map(|(id, l)| item(id, l)).collect();
        let m = SimilarityMatrix::compute(&items).unwrap();
        assert!((m.get(0, 1) - 0.9).abs() < 1e-12);
        assert!((m.get(1, 2) - 0.85).abs() < 1e-12);
        assert!((m.get(0, 2) - 0.6).abs() < 1e-12);
        let cs = cluster_candidates(&items, 0.8).unwrap();
        assert_eq!(cs.assignments(), vec![vec!["a".into(), "b".into(), "c".into()]]);
    }

    #[test]
    fn identical_logits_share_a_cluster() {
        let items = vec![item("x", vec![0.3, 0.7]), item("y", vec![0.3, 0.7])];
        let cs = cluster_candidates(&items, 0.95).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs.clusters[0].size(), 2);
        assert!((cs.clusters[0].mass - 0.2).abs() < 1e-15);
    }

    #[test]
    fn canonical_ordering() {
        let items = vec![
            item("d", vec![0.0, 1.0]),
            item("b", vec![1.0, 0.0]),
            item("c", vec![0.0, 1.0]),
            item("a", vec![1.0, 0.01]),
        ];
        let cs = cluster_candidates(&items, 0.9).unwrap();
        assert_eq!(
            cs.assignments(),
            vec![vec!["a".into(), "b".into()], vec!["c".into(), "d".into()]]
        );
    }

    #[test]
    fn similarity_matrix_is_symmetric_with_unit_diagonal() {
        let items = vec![
            item("a", vec![1.0, 2.0, -1.0]),
            item("b", vec![0.5, -2.0, 3.0]),
            item("c", vec![-1.0, 0.0, 0.25]),
        ];
        let m = SimilarityMatrix::compute(&items).unwrap();
        for i in 0..3 {
            assert!((m.get(i, i) - 1.0).abs() < 1e-12);
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
                assert!((-1.0..=1.0).contains(&m.get(i, j)));
            }
        }
        assert_eq!(m.rows().len(), 3);
    }

    fn brute_force(items: &[CandidateItem], tau: f64) -> BTreeSet<BTreeSet<String>> {
        let n = items.len();
        let mut label: Vec<Option<usize>> = vec![None; n];
        let mut next = 0;
        for s in 0..n {
            if label[s].is_some() {
                continue;
            }
            let mut stack = vec![s];
            label[s] = Some(next);
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    if label[v].is_none() {
                        let a = &items[u].logits;
                        let b = &items[v].logits;
                        let sim = a.dot(b) / (a.norm() * b.norm());
                        if sim > tau {
                            label[v] = Some(next);
                            stack.push(v);
                        }
                    }
                }
            }
            next += 1;
        }
        (0..next)
            .map(|c| {
                (0..n)
                    .filter(|&i| label[i] == Some(c))
                    .map(|i| items[i].id.to_string())
                    .collect()
            })
            .collect()
    }

    fn arb_items() -> impl Strategy<Value = Vec<CandidateItem>> {
        (1usize..=10, 2usize..=4).prop_flat_map(|(n, dim)| {
            proptest::collection::vec(proptest::collection::vec(-1.0..1.0f64, dim), n).prop_map(|rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, mut r)| {
                        if r.iter().all(|v| *v == 0.0) {
                            r[0] = 1.0;
                        }
                        item(&format!("i{i:02}"), r)
                    })
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn matches_connected_components(items in arb_items(), tau in 0.0..0.99f64) {
            let cs = cluster_candidates(&items, tau).unwrap();
            prop_assert_eq!(partition(&cs), brute_force(&items, tau));
        }

        #[test]
        fn permutation_invariant(items in arb_items(), tau in 0.0..0.99f64, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = items.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                cluster_candidates(&items, tau).unwrap(),
                cluster_candidates(&shuffled, tau).unwrap()
            );
        }

        #[test]
        fn positive_scaling_keeps_partition(items in arb_items(), tau in 0.0..0.99f64, factor in 1e-3..1e3f64) {
            let scaled: Vec<_> = items.iter().map(|c| CandidateItem { logits: c.logits.scaled(factor), ..c.clone() }).collect();
            for i in 0..items.len() {
                for j in 0..items.len() {
                    let a = cosine_similarity(&items[i].logits, &items[j].logits).unwrap();
                    let b = cosine_similarity(&scaled[i].logits, &scaled[j].logits).unwrap();
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
            // Partition equality can only fail for pairs sitting within float
            // noise of the threshold; skip those draws.
            let near_tie = (0..items.len()).any(|i| (0..items.len()).any(|j| i != j && {
                let s = cosine_similarity(&items[i].logits, &items[j].logits).unwrap();
                (s - tau).abs() < 1e-9
            }));
            if !near_tie {
                prop_assert_eq!(partition(&cluster_candidates(&items, tau).unwrap()), partition(&cluster_candidates(&scaled, tau).unwrap()));
            }
        }

        #[test]
        fn raising_threshold_never_merges(items in arb_items(), lo in 0.0..0.99f64, delta in 0.0..0.5f64) {
            let hi = (lo + delta).min(1.0);
            let a = cluster_candidates(&items, lo).unwrap().len();
            let b = cluster_candidates(&items, hi).unwrap().len();
            prop_assert!(b >= a);
        }
    }
}
