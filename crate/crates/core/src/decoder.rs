//! Uncertainty-weighted scoring and the two-pass decoding loop.
//!
//! Pass 1 samples `K` candidates at the base temperature and measures the
//! cluster entropy. Pass 2 resamples at the entropy-adapted temperature,
//! re-estimates clusters on that pool, and scores every pooled item with
//!
//! ```text
//! score(s) = (1 - alpha) * p(s) + alpha * phi(s)
//! phi(s)   = mass(c_s) / |c_s| * max(0, 1 - beta * H)
//! ```
//!
//! The final ranking is a deterministic sort on `score` (ties by id). The
//! adapted temperature only decides which candidates enter the pool.

use crate::config::UsdConfig;
use crate::error::{Error, Result};
use crate::model::{sort_scored, CandidateItem, ClusterSet, DecodeRequest, RankedList, ScoredItem};
use crate::sampling::{sample_candidates, SamplingState};
use crate::uncertainty::estimate;

/// `base * (1 + gamma * h_sem)`.
pub fn adaptive_temperature(base: f64, gamma: f64, h_sem: f64) -> f64 {
    base * (1.0 + gamma * h_sem)
}

/// Cluster term for one item: per-member mass of its cluster, damped by the
/// set's entropy. The damping factor is clamped at zero.
pub fn phi(item: &CandidateItem, clusters: &ClusterSet, beta: f64) -> Result<f64> {
    let idx = clusters
        .cluster_of(&item.id)
        .ok_or_else(|| Error::Internal(format!("item {} is not in any cluster", item.id)))?;
    Ok(phi_for_cluster(clusters, idx, beta))
}

fn phi_for_cluster(clusters: &ClusterSet, idx: usize, beta: f64) -> f64 {
    let c = &clusters.clusters[idx];
    let damping = (1.0 - beta * clusters.entropy).max(0.0);
    c.mass / c.size() as f64 * damping
}

/// Scores one pooled item. `item.prob` must already be renormalized over the
/// pool; the members of `clusters` are.
pub fn score(item: &CandidateItem, clusters: &ClusterSet, cfg: &UsdConfig) -> Result<ScoredItem> {
    let idx = clusters
        .cluster_of(&item.id)
        .ok_or_else(|| Error::Internal(format!("item {} is not in any cluster", item.id)))?;
    let phi = phi_for_cluster(clusters, idx, cfg.beta);
    Ok(ScoredItem {
        id: item.id.clone(),
        base_prob: item.prob,
        phi,
        score: (1.0 - cfg.alpha) * item.prob + cfg.alpha * phi,
        cluster_index: idx,
    })
}

/// Everything the decoder computed for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub ranking: RankedList,
    /// Clusters of the scored (pass-2) pool.
    pub clusters: ClusterSet,
    /// Entropy measured on the pass-1 pool; it sets the pass-2 temperature.
    pub pass1_entropy: f64,
}

pub fn decode(req: &DecodeRequest, cfg: &UsdConfig) -> Result<RankedList> {
    decode_traced(req, cfg).map(|t| t.ranking)
}

pub fn decode_traced(req: &DecodeRequest, cfg: &UsdConfig) -> Result<DecodeTrace> {
    req.check()?;
    let state = SamplingState::for_request(cfg.seed, &req.request_id);

    let first = sample_candidates(req, cfg.base_temperature, cfg.k_candidates, state)?;
    let pass1_entropy = estimate(&first, cfg)?.entropy;
    let temperature = adaptive_temperature(cfg.base_temperature, cfg.gamma, pass1_entropy);

    let pool = sample_candidates(req, temperature, cfg.k_candidates, state.with_pass(2))?;
    let clusters = estimate(&pool, cfg)?;

    let mut items = Vec::with_capacity(pool.len());
    for cluster in &clusters.clusters {
        for member in &cluster.members {
            items.push(score(member, &clusters, cfg)?);
        }
    }
    sort_scored(&mut items);

    Ok(DecodeTrace {
        ranking: RankedList {
            request_id: req.request_id.clone(),
            items,
            effective_temperature: temperature,
        },
        clusters,
        pass1_entropy,
    })
}
