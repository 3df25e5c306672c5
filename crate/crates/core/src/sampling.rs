//! Seeded candidate sampling.
//!
//! Every request gets its own RNG derived from the configured seed and a
//! hash of its `request_id`, so a request's samples never depend on which
//! other requests are in the batch or on the order they run in.

use rand::distributions::{Distribution, Open01, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{CandidateItem, DecodeRequest};

/// Stream used by the single-pass baseline samplers.
pub const BASELINE_PASS: u8 = 7;

/// Per-request RNG coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingState {
    pub rng_seed: u64,
    pub pass_index: u8,
}

impl SamplingState {
    /// `rng_seed = splitmix64(seed ^ splitmix64(fnv1a64(request_id)))`, pass 1.
    pub fn for_request(seed: u64, request_id: &str) -> Self {
        SamplingState {
            rng_seed: splitmix64(seed ^ splitmix64(fnv1a64(request_id.as_bytes()))),
            pass_index: 1,
        }
    }

    pub fn with_pass(self, pass_index: u8) -> Self {
        SamplingState { pass_index, ..self }
    }

    /// ChaCha8 keyed by `rng_seed`, one stream per pass.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(u64::from(self.pass_index));
        rng
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_temperature(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(t))
    }
}

/// `ln p / t` for each probability.
pub fn tempered_log_weights(probs: &[f64], temperature: f64) -> Vec<f64> {
    probs.iter().map(|p| p.ln() / temperature).collect()
}

/// Draws `k` distinct indices, each draw proportional to `exp(log_weight)`
/// among the indices not yet drawn. Returned in draw order.
///
/// Uses Gumbel-top-k: perturb every log-weight with independent Gumbel noise
/// and keep the `k` largest, which has the same law as sequential draws
/// without replacement and stays exact for very small temperatures.
pub fn sample_without_replacement<R: rand::Rng>(log_weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = log_weights
        .iter()
        .enumerate()
        .map(|(i, lw)| {
            let u: f64 = Open01.sample(rng);
            (lw - (-u.ln()).ln(), i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

/// `n` independent draws with replacement, proportional to `exp(log_weight)`.
pub fn sample_with_replacement<R: rand::Rng>(log_weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let dist = WeightedIndex::new(&weights).expect("max weight is exactly 1");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Candidates sorted by id, the canonical order sampling walks in.
pub(crate) fn canonical_candidates(req: &DecodeRequest) -> Vec<&CandidateItem> {
    let mut v: Vec<&CandidateItem> = req.candidates.iter().collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

/// Samples `min(k, n)` distinct candidates from the softmax of
/// `ln prob / temperature`, in draw order.
pub fn sample_candidates(
    req: &DecodeRequest,
    temperature: f64,
    k: usize,
    state: SamplingState,
) -> Result<Vec<CandidateItem>> {
    check_temperature(temperature)?;
    let pool = canonical_candidates(req);
    let probs: Vec<f64> = pool.iter().map(|c| c.prob).collect();
    let lw = tempered_log_weights(&probs, temperature);
    let picks = sample_without_replacement(&lw, k, &mut state.rng());
    Ok(picks.into_iter().map(|i| pool[i].clone()).collect())
}
