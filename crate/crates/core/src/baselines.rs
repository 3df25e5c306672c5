//! Comparison decoders and the strategy registry.
//!
//! Baselines treat every candidate as its own cluster with zero entropy, so
//! their `ScoredItem`s report `phi == base_prob` except where the strategy
//! has a score of its own (beam path probability, self-consistency vote
//! share), which is then carried in both `phi` and `score`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::UsdConfig;
use crate::decoder::decode;
use crate::error::{Error, Result};
use crate::model::{sort_scored, DecodeRequest, ItemId, RankedList, ScoredItem};
use crate::sampling::{
    canonical_candidates, sample_with_replacement, sample_without_replacement, tempered_log_weights, SamplingState,
    BASELINE_PASS,
};
use crate::token_model::{Codebook, TokenFactoredModel, TokenSeq};
use crate::uncertainty::{canonical_sum, renormalize};

pub const DEFAULT_TOP_P: f64 = 0.9;
pub const DEFAULT_N: usize = 10;
pub const DEFAULT_BEAM_WIDTH: usize = 5;

// Cumulative-mass comparisons tolerate this much rounding (0.6 + 0.3 < 0.9 in f64).
const MASS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Greedy,
    Beam,
    Nucleus,
    BestOfN,
    SelfConsistency,
    Usd,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Greedy,
        StrategyKind::Beam,
        StrategyKind::Nucleus,
        StrategyKind::BestOfN,
        StrategyKind::SelfConsistency,
        StrategyKind::Usd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Greedy => "greedy",
            StrategyKind::Beam => "beam",
            StrategyKind::Nucleus => "nucleus",
            StrategyKind::BestOfN => "best_of_n",
            StrategyKind::SelfConsistency => "self_consistency",
            StrategyKind::Usd => "usd",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let known: Vec<_> = StrategyKind::ALL.iter().map(|k| k.name()).collect();
            Error::Strategy(format!("unknown strategy {s:?} (known: {})", known.join(", ")))
        })
    }
}

/// Which decoder to run and its knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Beam width for `beam`, sample count for `best_of_n` and `self_consistency`.
    pub width_or_n: usize,
    /// Nucleus mass; only read by `nucleus`.
    pub top_p: f64,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        let width_or_n = match kind {
            StrategyKind::Beam => DEFAULT_BEAM_WIDTH,
            _ => DEFAULT_N,
        };
        StrategySpec {
            kind,
            width_or_n,
            top_p: DEFAULT_TOP_P,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_or_n == 0 {
            return Err(Error::Strategy("beam width / n must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Strategy(format!("top_p out of (0,1]: got {}", self.top_p)));
        }
        Ok(())
    }
}

fn scored(id: &ItemId, base: f64, own: f64, idx: usize) -> ScoredItem {
    ScoredItem {
        id: id.clone(),
        base_prob: base,
        phi: own,
        score: own,
        cluster_index: idx,
    }
}

/// Re-indexes `cluster_index` to the final position (baselines use singletons).
fn finish(request_id: &str, mut items: Vec<ScoredItem>, k: usize, temperature: f64) -> RankedList {
    items.truncate(k);
    for (i, s) in items.iter_mut().enumerate() {
        s.cluster_index = i;
    }
    RankedList {
        request_id: request_id.to_owned(),
        items,
        effective_temperature: temperature,
    }
}

/// Top-`k` candidates by probability, ties by id.
pub fn greedy_rank(req: &DecodeRequest, k: usize) -> RankedList {
    let mut items: Vec<ScoredItem> = renormalize(&req.candidates)
        .iter()
        .map(|c| scored(&c.id, c.prob, c.prob, 0))
        .collect();
    sort_scored(&mut items);
    finish(&req.request_id, items, k, 1.0)
}

/// Number of leading entries of a descending probability list needed for the
/// cumulative mass to reach `top_p`.
pub fn nucleus_prefix_len(sorted_probs: &[f64], top_p: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in sorted_probs.iter().enumerate() {
        acc += p;
        if acc >= top_p - MASS_EPS {
            return i + 1;
        }
    }
    sorted_probs.len()
}

/// Samples `k` distinct items from the smallest probability-sorted prefix
/// with mass at least `top_p`, then ranks the sample by probability.
pub fn nucleus_rank(req: &DecodeRequest, top_p: f64, k: usize, state: SamplingState) -> RankedList {
    let mut sorted = renormalize(&req.candidates);
    sorted.sort_by(|a, b| b.prob.total_cmp(&a.prob).then_with(|| a.id.cmp(&b.id)));
    let probs: Vec<f64> = sorted.iter().map(|c| c.prob).collect();
    let prefix = &sorted[..nucleus_prefix_len(&probs, top_p)];
    let prefix = renormalize(prefix);

    let lw = tempered_log_weights(&prefix.iter().map(|c| c.prob).collect::<Vec<_>>(), 1.0);
    let picks = sample_without_replacement(&lw, k, &mut state.with_pass(BASELINE_PASS).rng());
    let mut items: Vec<ScoredItem> = picks
        .into_iter()
        .map(|i| scored(&prefix[i].id, prefix[i].prob, prefix[i].prob, 0))
        .collect();
    sort_scored(&mut items);
    finish(&req.request_id, items, k, 1.0)
}

/// `n` draws with replacement at `temperature`, as indices into the
/// id-sorted candidate list.
fn draws(req: &DecodeRequest, n: usize, temperature: f64, state: SamplingState) -> Result<Vec<usize>> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidTemperature(temperature));
    }
    let pool = canonical_candidates(req);
    let probs: Vec<f64> = pool.iter().map(|c| c.prob).collect();
    let lw = tempered_log_weights(&probs, temperature);
    Ok(sample_with_replacement(
        &lw,
        n,
        &mut state.with_pass(BASELINE_PASS).rng(),
    ))
}

/// Distinct items among `n` samples, ranked by model probability.
pub fn best_of_n_rank(
    req: &DecodeRequest,
    n: usize,
    k: usize,
    temperature: f64,
    state: SamplingState,
) -> Result<RankedList> {
    let pool = canonical_candidates(req);
    let total = canonical_sum(pool.iter().map(|c| c.prob));
    let mut hit = vec![false; pool.len()];
    for i in draws(req, n, temperature, state)? {
        hit[i] = true;
    }
    let mut items: Vec<ScoredItem> = pool
        .iter()
        .zip(&hit)
        .filter(|(_, h)| **h)
        .map(|(c, _)| scored(&c.id, c.prob / total, c.prob / total, 0))
        .collect();
    sort_scored(&mut items);
    Ok(finish(&req.request_id, items, k, temperature))
}

/// Distinct items among `n` samples, ranked by how often they were drawn,
/// then by model probability, then by id.
pub fn self_consistency_rank(
    req: &DecodeRequest,
    n: usize,
    k: usize,
    temperature: f64,
    state: SamplingState,
) -> Result<RankedList> {
    let pool = canonical_candidates(req);
    let total = canonical_sum(pool.iter().map(|c| c.prob));
    let mut counts = vec![0usize; pool.len()];
    for i in draws(req, n, temperature, state)? {
        counts[i] += 1;
    }
    let mut voted: Vec<(usize, f64, &ItemId)> = pool
        .iter()
        .zip(&counts)
        .filter(|(_, c)| **c > 0)
        .map(|(c, n)| (*n, c.prob / total, &c.id))
        .collect();
    voted.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then_with(|| a.2.cmp(b.2)));
    let items = voted
        .into_iter()
        .map(|(count, p, id)| scored(id, p, count as f64 / n as f64, 0))
        .collect();
    Ok(finish(&req.request_id, items, k, temperature))
}

/// Result of a beam run: the ranking plus how many completed sequences had
/// no catalog item and were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutcome {
    pub ranking: RankedList,
    pub dropped: usize,
}

/// Width-`width` beam search over token steps; completed sequences are
/// mapped back to items and the top `k` by path log-probability returned.
/// Extensions with zero probability are never taken. Ties go to the smaller
/// token sequence.
pub fn beam_rank(model: &TokenFactoredModel, width: usize, k: usize, request_id: &str) -> BeamOutcome {
    let width = width.max(1);
    let mut beams: Vec<(TokenSeq, f64)> = vec![(Vec::new(), 0.0)];
    for _ in 0..model.depth() {
        let mut next = Vec::with_capacity(beams.len() * model.alphabet());
        for (prefix, logp) in &beams {
            let Some(table) = model.conditional(prefix) else {
                continue;
            };
            for (tok, p) in table.iter().enumerate() {
                if *p > 0.0 {
                    let mut seq = prefix.clone();
                    seq.push(tok as u8);
                    next.push((seq, logp + p.ln()));
                }
            }
        }
        next.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        next.truncate(width);
        beams = next;
    }

    let mut dropped = 0;
    let mut items = Vec::new();
    for (seq, logp) in beams {
        match model.item(&seq) {
            Some(id) => {
                let p = logp.exp();
                items.push(scored(id, p, p, 0));
            }
            None => dropped += 1,
        }
    }
    BeamOutcome {
        ranking: finish(request_id, items, k, 1.0),
        dropped,
    }
}

/// Runs a [`StrategySpec`] against requests under one config.
///
/// Output length is capped at `cfg.k_candidates` for every strategy.
#[derive(Debug, Clone)]
pub struct Ranker<'a> {
    pub spec: StrategySpec,
    pub cfg: UsdConfig,
    pub codebook: Option<&'a Codebook>,
    dropped: Arc<AtomicUsize>,
}

impl<'a> Ranker<'a> {
    pub fn new(spec: StrategySpec, cfg: UsdConfig, codebook: Option<&'a Codebook>) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        if spec.kind == StrategyKind::Beam && codebook.is_none() {
            return Err(Error::Strategy("beam search needs a token codebook (catalog)".into()));
        }
        Ok(Ranker {
            spec,
            cfg,
            codebook,
            dropped: Arc::default(),
        })
    }

    pub fn rank(&self, req: &DecodeRequest) -> Result<RankedList> {
        req.check()?;
        let k = self.cfg.k_candidates;
        let state = SamplingState::for_request(self.cfg.seed, &req.request_id);
        let t0 = self.cfg.base_temperature;
        match self.spec.kind {
            StrategyKind::Usd => decode(req, &self.cfg),
            StrategyKind::Greedy => Ok(greedy_rank(req, k)),
            StrategyKind::Nucleus => Ok(nucleus_rank(req, self.spec.top_p, k, state)),
            StrategyKind::BestOfN => best_of_n_rank(req, self.spec.width_or_n, k, t0, state),
            StrategyKind::SelfConsistency => self_consistency_rank(req, self.spec.width_or_n, k, t0, state),
            StrategyKind::Beam => {
                let book = self
                    .codebook
                    .ok_or_else(|| Error::Internal("beam without codebook".into()))?;
                let model = TokenFactoredModel::from_request(req, book)?;
                let out = beam_rank(&model, self.spec.width_or_n, k, &req.request_id);
                self.dropped.fetch_add(out.dropped, Ordering::Relaxed);
                Ok(out.ranking)
            }
        }
    }

    /// Beam sequences dropped so far for lacking a catalog item.
    pub fn dropped(&self) -> usize {
        self.dropped.load(Ordering::Relaxed)
    }
}

/// Parses a comma-separated strategy list, dropping repeats. Returns the
/// unique kinds in first-seen order and the names that were repeated.
pub fn parse_strategy_list(list: &str) -> Result<(Vec<StrategyKind>, Vec<String>)> {
    let mut seen = BTreeMap::new();
    let mut kinds = Vec::new();
    let mut dups = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind: StrategyKind = name.parse()?;
        if seen.insert(kind, ()).is_some() {
            dups.push(name.to_owned());
        } else {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        return Err(Error::Strategy("empty strategy list".into()));
    }
    Ok((kinds, dups))
}
