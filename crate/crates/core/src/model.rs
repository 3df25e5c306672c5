//! Shared domain types: item identifiers, candidate records, requests,
//! clusters and ranked output.
//!
//! Nothing in here runs an algorithm. Types are plain data that can be
//! shared read-only across worker threads.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::RequestError;

/// Opaque, non-empty item identifier. Ordering is lexicographic on the
/// underlying string and is the tie-break used everywhere in the crate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Self {
        ItemId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ItemId {
    fn from(s: &str) -> Self {
        ItemId(s.to_owned())
    }
}

impl From<String> for ItemId {
    fn from(s: String) -> Self {
        ItemId(s)
    }
}

/// Pre-softmax activation vector attached to a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Self {
        LogitVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &LogitVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Returns a copy with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> LogitVector {
        LogitVector(self.0.iter().map(|v| v * factor).collect())
    }
}

impl From<Vec<f64>> for LogitVector {
    fn from(values: Vec<f64>) -> Self {
        LogitVector(values)
    }
}

/// One next-item hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateItem {
    pub id: ItemId,
    pub logits: LogitVector,
    pub prob: f64,
}

impl CandidateItem {
    pub fn new(id: impl Into<ItemId>, logits: impl Into<LogitVector>, prob: f64) -> Self {
        CandidateItem {
            id: id.into(),
            logits: logits.into(),
            prob,
        }
    }

    pub(crate) fn with_prob(&self, prob: f64) -> Self {
        CandidateItem {
            id: self.id.clone(),
            logits: self.logits.clone(),
            prob,
        }
    }
}

/// A user's history together with the candidate set to rerank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub request_id: String,
    #[serde(default)]
    pub history: Vec<ItemId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<ItemId>,
    pub candidates: Vec<CandidateItem>,
}

impl DecodeRequest {
    /// Checks every request invariant without consuming the request.
    pub fn check(&self) -> Result<(), RequestError> {
        let first = self.candidates.first().ok_or(RequestError::EmptyCandidates)?;
        let dim = first.logits.dim();
        let mut seen = HashSet::with_capacity(self.candidates.len());
        for c in &self.candidates {
            if c.id.as_str().is_empty() {
                return Err(RequestError::EmptyItemId);
            }
            if !seen.insert(&c.id) {
                return Err(RequestError::DuplicateId(c.id.clone()));
            }
            if c.logits.dim() == 0 {
                return Err(RequestError::EmptyLogits(c.id.clone()));
            }
            if c.logits.dim() != dim {
                return Err(RequestError::InconsistentDimension {
                    id: c.id.clone(),
                    expected: dim,
                    found: c.logits.dim(),
                });
            }
            if c.logits.values().iter().any(|v| !v.is_finite()) {
                return Err(RequestError::NonFiniteLogit(c.id.clone()));
            }
            if c.logits.norm() <= 0.0 {
                return Err(RequestError::ZeroNorm(c.id.clone()));
            }
            if !(c.prob.is_finite() && c.prob > 0.0 && c.prob <= 1.0) {
                return Err(RequestError::InvalidProb {
                    id: c.id.clone(),
                    prob: c.prob,
                });
            }
        }
        Ok(())
    }

    pub fn logit_dim(&self) -> usize {
        self.candidates.first().map_or(0, |c| c.logits.dim())
    }
}

/// Returns the request unchanged when all of its invariants hold.
pub fn validate_request(req: DecodeRequest) -> Result<DecodeRequest, RequestError> {
    req.check()?;
    Ok(req)
}

/// A semantic equivalence class and its aggregated probability mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCluster {
    /// Sorted by `ItemId`.
    pub members: Vec<CandidateItem>,
    pub mass: f64,
}

impl SemanticCluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, id: &ItemId) -> bool {
        self.members.iter().any(|m| &m.id == id)
    }

    pub fn ids(&self) -> Vec<ItemId> {
        self.members.iter().map(|m| m.id.clone()).collect()
    }
}

/// Partition of a candidate set into clusters, plus the cluster-level entropy.
///
/// Clusters are ordered by their smallest member id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<SemanticCluster>,
    pub entropy: f64,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.mass).collect()
    }

    /// Index of the cluster holding `id`.
    pub fn cluster_of(&self, id: &ItemId) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(id))
    }

    /// Member ids per cluster, in cluster order.
    pub fn assignments(&self) -> Vec<Vec<ItemId>> {
        self.clusters.iter().map(SemanticCluster::ids).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: ItemId,
    pub base_prob: f64,
    pub phi: f64,
    pub score: f64,
    pub cluster_index: usize,
}

/// Scored items for one request, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub request_id: String,
    pub items: Vec<ScoredItem>,
    pub effective_temperature: f64,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = &ItemId> {
        self.items.iter().map(|s| &s.id)
    }

    /// 1-indexed rank of `id`, if present.
    pub fn rank_of(&self, id: &ItemId) -> Option<usize> {
        self.ids().position(|x| x == id).map(|p| p + 1)
    }

    pub fn top(&self) -> Option<&ItemId> {
        self.items.first().map(|s| &s.id)
    }
}

/// Sorts by score descending, then id ascending.
pub(crate) fn sort_scored(items: &mut [ScoredItem]) {
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: &str, logits: Vec<f64>, prob: f64) -> CandidateItem {
        CandidateItem::new(id, logits, prob)
    }

    fn req(candidates: Vec<CandidateItem>) -> DecodeRequest {
        DecodeRequest {
            request_id: "r".into(),
            history: vec![],
            ground_truth: None,
            candidates,
        }
    }

    #[test]
    fn valid_request_passes_through() {
        let r = req(vec![
            cand("a", vec![1.0; 8], 0.2),
            cand("b", vec![0.5; 8], 0.3),
            cand("c", vec![-1.0; 8], 0.5),
        ]);
        assert_eq!(validate_request(r.clone()).unwrap(), r);
    }

    #[test]
    fn each_violation_has_its_own_diagnostic() {
        assert_eq!(req(vec![]).check(), Err(RequestError::EmptyCandidates));

        let e = req(vec![
            cand("a", vec![1.0; 8], 0.2),
            cand("b", vec![1.0; 8], 0.2),
            cand("c", vec![1.0; 16], 0.2),
        ])
        .check()
        .unwrap_err();
        assert!(e.to_string().starts_with("inconsistent logit dimension"), "{e}");

        let e = req(vec![cand("a", vec![0.0; 4], 0.2)]).check().unwrap_err();
        assert!(e.to_string().starts_with("zero-norm logit vector"), "{e}");

        let e = req(vec![cand("a", vec![1.0], 0.2), cand("a", vec![1.0], 0.2)])
            .check()
            .unwrap_err();
        assert_eq!(e, RequestError::DuplicateId("a".into()));

        let e = req(vec![cand("a", vec![1.0, f64::NAN], 0.2)]).check().unwrap_err();
        assert_eq!(e, RequestError::NonFiniteLogit("a".into()));

        for bad in [0.0, -0.1, 1.5, f64::INFINITY] {
            let e = req(vec![cand("a", vec![1.0], bad)]).check().unwrap_err();
            assert!(matches!(e, RequestError::InvalidProb { .. }));
        }
        assert_eq!(
            req(vec![cand("", vec![1.0], 0.5)]).check(),
            Err(RequestError::EmptyItemId)
        );
        assert_eq!(
            req(vec![cand("a", vec![], 0.5)]).check(),
            Err(RequestError::EmptyLogits("a".into()))
        );
    }

    #[test]
    fn request_wire_format() {
        let line = r#"{"request_id":"u1","history":["x","y"],"ground_truth":"a","candidates":[{"id":"a","logits":[1.0,0.0],"prob":0.7},{"id":"b","logits":[0.0,1.0],"prob":0.3}]}"#;
        let r: DecodeRequest = serde_json::from_str(line).unwrap();
        assert_eq!(r.ground_truth, Some("a".into()));
        assert_eq!(r.candidates[1].logits.values(), &[0.0, 1.0]);
        assert_eq!(serde_json::to_string(&r).unwrap(), line);
    }

    #[test]
    fn ranked_list_ranks_are_one_indexed() {
        let items = ["b", "a"]
            .iter()
            .map(|id| ScoredItem {
                id: (*id).into(),
                base_prob: 0.5,
                phi: 0.5,
                score: 0.5,
                cluster_index: 0,
            })
            .collect();
        let r = RankedList {
            request_id: "r".into(),
            items,
            effective_temperature: 1.0,
        };
        assert_eq!(r.rank_of(&"a".into()), Some(2));
        assert_eq!(r.rank_of(&"z".into()), None);
    }
}
