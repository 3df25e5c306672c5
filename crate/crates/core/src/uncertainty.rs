//! Cluster-level probability mass and semantic entropy.

use crate::clustering::{cluster_candidates, singleton_clusters};
use crate::config::{EntropyNormalization, UsdConfig};
use crate::error::SimilarityError;
use crate::model::{CandidateItem, ClusterSet};

/// Scales probabilities so they sum to one over the given items.
///
/// The total is accumulated in ascending order of probability, so two calls
/// on the same multiset of candidates divide by the exact same number no
/// matter how the items are ordered.
pub fn renormalize(items: &[CandidateItem]) -> Vec<CandidateItem> {
    let total = canonical_sum(items.iter().map(|c| c.prob));
    items.iter().map(|c| c.with_prob(c.prob / total)).collect()
}

pub(crate) fn canonical_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

pub fn cluster_mass(members: &[CandidateItem]) -> f64 {
    members.iter().map(|m| m.prob).sum()
}

/// Masses of a set of clusters. Each is positive and they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDistribution {
    masses: Vec<f64>,
}

impl ClusterDistribution {
    /// Returns `None` if a mass is not positive or the total is off by more than 1e-9.
    pub fn new(masses: Vec<f64>) -> Option<Self> {
        let total: f64 = masses.iter().sum();
        let ok = !masses.is_empty() && masses.iter().all(|m| m.is_finite() && *m > 0.0) && (total - 1.0).abs() <= 1e-9;
        ok.then_some(ClusterDistribution { masses })
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

/// Shannon entropy (natural log) of the cluster masses, optionally divided by
/// `ln m`. A single cluster always has entropy 0.
pub fn semantic_entropy(dist: &ClusterDistribution, normalization: EntropyNormalization) -> f64 {
    let m = dist.masses.len();
    if m <= 1 {
        return 0.0;
    }
    let h = shannon(&dist.masses);
    match normalization {
        EntropyNormalization::None => h,
        EntropyNormalization::LogM => h / (m as f64).ln(),
    }
}

fn shannon(masses: &[f64]) -> f64 {
    let h: f64 = masses.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
    h.max(0.0)
}

/// Entropy over individual items, ignoring cluster structure.
pub fn item_entropy(items: &[CandidateItem]) -> f64 {
    let probs: Vec<f64> = renormalize(items).iter().map(|c| c.prob).collect();
    shannon(&probs)
}

/// Renormalizes the sampled candidates, groups them, and fills in masses and
/// entropy.
///
/// With `enable_clustering` off every item is its own cluster; with
/// `enable_uncertainty` off the entropy is reported as 0.
pub fn estimate(items: &[CandidateItem], cfg: &UsdConfig) -> Result<ClusterSet, SimilarityError> {
    let items = renormalize(items);
    let mut set = if cfg.enable_clustering {
        cluster_candidates(&items, cfg.sim_threshold)?
    } else {
        singleton_clusters(&items)
    };
    set.entropy = if cfg.enable_uncertainty {
        let m = set.len();
        if m <= 1 {
            0.0
        } else {
            let h = shannon(&set.masses());
            match cfg.entropy_normalization {
                EntropyNormalization::None => h,
                EntropyNormalization::LogM => h / (m as f64).ln(),
            }
        }
    } else {
        0.0
    };
    Ok(set)
}
