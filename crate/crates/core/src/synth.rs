//! Seeded synthetic corpora with known semantic groups.
//!
//! A corpus has three parts:
//!
//! * a catalog of items, each with a group label, a logit vector and a
//!   token code;
//! * per-user interaction sequences driven by a group-level Markov chain;
//! * one candidate set per user, shaped to a chosen probability regime.
//!
//! Items in the same group point near a shared centroid; centroids are
//! orthogonalized, so any clustering threshold between the inter-group cap
//! and the intra-group target recovers the groups exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::SynthError;
use crate::model::{CandidateItem, DecodeRequest, ItemId};
use crate::token_model::{Codebook, TokenSeq};

/// Token depth used for catalog codes.
pub const TOKEN_DEPTH: usize = 3;

const CENTROID_ATTEMPTS: usize = 10;
const REPAIR_ROUNDS: usize = 50;

/// Shape of a candidate set relative to the true item's group `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestRegime {
    /// Every distractor is a singleton below `mass(T)/|T|`; the truth is the
    /// most likely member of `T`.
    Strict,
    /// The top distractor beats every member of `T` but sits in a cluster
    /// of low-probability siblings, so its per-member mass is below `T`'s.
    Split,
    /// `mass(T)` beats every distractor and one singleton distractor beats
    /// every member of `T`.
    Weak,
    /// No equivalents: every candidate is from a different group and the
    /// truth has the highest probability.
    Distinct,
}

impl RequestRegime {
    pub fn name(self) -> &'static str {
        match self {
            RequestRegime::Strict => "strict",
            RequestRegime::Split => "split",
            RequestRegime::Weak => "weak",
            RequestRegime::Distinct => "distinct",
        }
    }
}

/// Which regimes a corpus draws its requests from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusRegime {
    /// Strict and split requests, half each.
    #[default]
    UsdWins,
    /// Weak requests only.
    Weak,
    /// Strict, split and distinct requests, a third each.
    Mixed,
}

impl CorpusRegime {
    fn choices(self) -> &'static [RequestRegime] {
        match self {
            CorpusRegime::UsdWins => &[RequestRegime::Strict, RequestRegime::Split],
            CorpusRegime::Weak => &[RequestRegime::Weak],
            CorpusRegime::Mixed => &[RequestRegime::Strict, RequestRegime::Split, RequestRegime::Distinct],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CorpusRegime::UsdWins => "usd_wins",
            CorpusRegime::Weak => "weak",
            CorpusRegime::Mixed => "mixed",
        }
    }
}

impl fmt::Display for CorpusRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorpusRegime {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, SynthError> {
        match s {
            "usd_wins" => Ok(CorpusRegime::UsdWins),
            "weak" => Ok(CorpusRegime::Weak),
            "mixed" => Ok(CorpusRegime::Mixed),
            other => Err(SynthError::InvalidSpec(format!(
                "unknown regime {other:?} (expected usd_wins, weak or mixed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_groups: usize,
    pub intra_group_sim_target: f64,
    pub inter_group_sim_cap: f64,
    pub logit_dim: usize,
    /// Sharpness of the group transition rows; infinity makes them one-hot.
    /// Serialized as the string `"inf"` when infinite.
    #[serde(with = "concentration")]
    pub markov_concentration: f64,
    pub seed: u64,
    /// Interactions per user, including the held-out last one.
    pub seq_len: usize,
    /// Upper bound on candidates per request.
    pub n_candidates: usize,
    pub regime: CorpusRegime,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_users: 500,
            n_items: 500,
            n_groups: 50,
            intra_group_sim_target: 0.9,
            inter_group_sim_cap: 0.3,
            logit_dim: 64,
            markov_concentration: 4.0,
            seed: 42,
            seq_len: 6,
            n_candidates: 10,
            regime: CorpusRegime::UsdWins,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_users == 0 || self.n_items == 0 || self.n_groups == 0 || self.logit_dim == 0 {
            return bad("n_users, n_items, n_groups and logit_dim must be positive".into());
        }
        if self.n_groups > self.n_items {
            return bad(format!(
                "n_groups ({}) exceeds n_items ({})",
                self.n_groups, self.n_items
            ));
        }
        let (t, c) = (self.intra_group_sim_target, self.inter_group_sim_cap);
        if !(t > 0.0 && t <= 1.0) {
            return bad(format!("intra_group_sim_target out of (0,1]: got {t}"));
        }
        if !(0.0..1.0).contains(&c) {
            return bad(format!("inter_group_sim_cap out of [0,1): got {c}"));
        }
        if c >= t {
            return bad(format!(
                "inter_group_sim_cap ({c}) must be below intra_group_sim_target ({t})"
            ));
        }
        if self.markov_concentration.is_nan() || self.markov_concentration <= 0.0 {
            return bad(format!(
                "markov_concentration must be > 0: got {}",
                self.markov_concentration
            ));
        }
        if self.seq_len < 3 {
            return bad(format!("seq_len must be at least 3: got {}", self.seq_len));
        }
        if self.n_candidates < 2 {
            return bad(format!("n_candidates must be at least 2: got {}", self.n_candidates));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

mod concentration {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub id: ItemId,
    pub group: usize,
    pub logits: Vec<f64>,
    pub tokens: TokenSeq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub items: Vec<CatalogItem>,
    pub n_groups: usize,
}

impl Catalog {
    pub fn group_of(&self) -> BTreeMap<ItemId, usize> {
        self.items.iter().map(|i| (i.id.clone(), i.group)).collect()
    }

    /// Item indices per group, in catalog order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.n_groups];
        for (i, item) in self.items.iter().enumerate() {
            m[item.group].push(i);
        }
        m
    }

    pub fn codebook(&self) -> Result<Codebook, crate::error::Error> {
        let alphabet = self
            .items
            .iter()
            .flat_map(|i| i.tokens.iter())
            .map(|t| usize::from(*t) + 1)
            .max()
            .unwrap_or(2)
            .max(2);
        let depth = self.items.first().map_or(TOKEN_DEPTH, |i| i.tokens.len());
        Codebook::from_codes(
            alphabet,
            depth,
            self.items.iter().map(|i| (i.id.clone(), i.tokens.clone())).collect(),
        )
    }

    /// Smallest intra-group and largest inter-group cosine over all pairs.
    pub fn similarity_extremes(&self) -> (f64, f64) {
        let unit: Vec<Vec<f64>> = self.items.iter().map(|i| unit(&i.logits)).collect();
        let mut min_intra = f64::INFINITY;
        let mut max_inter = f64::NEG_INFINITY;
        for a in 0..unit.len() {
            for b in a + 1..unit.len() {
                let s = dot(&unit[a], &unit[b]);
                if self.items[a].group == self.items[b].group {
                    min_intra = min_intra.min(s);
                } else {
                    max_inter = max_inter.max(s);
                }
            }
        }
        (min_intra, max_inter)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    v.iter().map(|x| x / n).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Unit centroids; Gram-Schmidt makes them orthonormal when they fit.
fn draw_centroids(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    for g in 0..n {
        let mut v = gaussian(rng, dim);
        if g < dim {
            for prev in &out {
                let d = dot(&v, prev);
                for (x, p) in v.iter_mut().zip(prev) {
                    *x -= d * p;
                }
            }
        }
        out.push(unit(&v));
    }
    out
}

/// Indices of items involved in at least one violating pair.
fn violators(units: &[Vec<f64>], groups: &[usize], target: f64, cap: f64) -> Vec<bool> {
    let mut bad = vec![false; units.len()];
    for a in 0..units.len() {
        for b in a + 1..units.len() {
            let s = dot(&units[a], &units[b]);
            let ok = if groups[a] == groups[b] { s >= target } else { s <= cap };
            if !ok {
                bad[a] = true;
                bad[b] = true;
            }
        }
    }
    bad
}

/// Draws the catalog and checks every pair; violating items are redrawn a
/// bounded number of times, then the centroids are redrawn.
pub fn generate_catalog(spec: &SynthSpec) -> Result<Catalog, SynthError> {
    spec.validate()?;
    let mut rng = spec.rng(1);
    let dim = spec.logit_dim;
    let target = spec.intra_group_sim_target;
    let cap = spec.inter_group_sim_cap;
    // Two noisy copies of a unit centroid have cosine about 1 / (1 + dim * sigma^2);
    // aim halfway between that and the target.
    let sigma = (0.5 * (1.0 / target - 1.0) / dim as f64).sqrt();
    let groups: Vec<usize> = (0..spec.n_items).map(|i| i % spec.n_groups).collect();

    for _ in 0..CENTROID_ATTEMPTS {
        let centroids = draw_centroids(&mut rng, spec.n_groups, dim);
        let draw = |rng: &mut ChaCha8Rng, g: usize| -> Vec<f64> {
            let scale: f64 = rng.gen_range(0.5..2.0);
            centroids[g]
                .iter()
                .map(|c| scale * (c + sigma * rng.sample::<f64, _>(StandardNormal)))
                .collect()
        };
        let mut logits: Vec<Vec<f64>> = groups.iter().map(|g| draw(&mut rng, *g)).collect();
        for _ in 0..REPAIR_ROUNDS {
            let units: Vec<Vec<f64>> = logits.iter().map(|l| unit(l)).collect();
            let bad = violators(&units, &groups, target, cap);
            if !bad.contains(&true) {
                let ids: Vec<ItemId> = (0..spec.n_items).map(|i| ItemId::new(format!("item_{i:05}"))).collect();
                let book = Codebook::sequential(&ids, TOKEN_DEPTH);
                let items = ids
                    .into_iter()
                    .zip(logits)
                    .zip(&groups)
                    .map(|((id, logits), g)| CatalogItem {
                        tokens: book.code(&id).expect("coded above").clone(),
                        id,
                        group: *g,
                        logits,
                    })
                    .collect();
                return Ok(Catalog {
                    items,
                    n_groups: spec.n_groups,
                });
            }
            for (i, b) in bad.iter().enumerate() {
                if *b {
                    logits[i] = draw(&mut rng, groups[i]);
                }
            }
        }
    }
    Err(SynthError::Unsatisfiable {
        attempts: CENTROID_ATTEMPTS,
        target,
        cap,
        dim,
        groups: spec.n_groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user: String,
    pub items: Vec<ItemId>,
    pub groups: Vec<usize>,
    /// Regime of this user's candidate set.
    pub regime: RequestRegime,
}

/// Row-stochastic group transitions, each row proportional to `exp(kappa * u)`.
pub fn transition_matrix(n_groups: usize, kappa: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n_groups)
        .map(|_| {
            let u: Vec<f64> = (0..n_groups).map(|_| rng.gen::<f64>()).collect();
            let (best, max) = argmax(&u);
            if !kappa.is_finite() {
                let mut row = vec![0.0; n_groups];
                row[best] = 1.0;
                return row;
            }
            let w: Vec<f64> = u.iter().map(|x| (kappa * (x - max)).exp()).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect()
        })
        .collect()
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().copied().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (i, x)| if x > acc.1 { (i, x) } else { acc },
    )
}

fn sample_row(row: &[f64], rng: &mut impl Rng) -> usize {
    let mut u: f64 = rng.gen();
    for (i, p) in row.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    argmax(row).0
}

/// Group sequences from the chain; the last step always takes the row's
/// most likely group, so the held-out item's group follows from the history.
pub fn generate_interactions(catalog: &Catalog, spec: &SynthSpec) -> Vec<UserSequence> {
    let mut rng = spec.rng(2);
    let members = catalog.members();
    let matrix = transition_matrix(catalog.n_groups, spec.markov_concentration, &mut rng);
    let choices = spec.regime.choices();
    let width = spec.n_users.to_string().len();

    (0..spec.n_users)
        .map(|u| {
            let mut groups = vec![rng.gen_range(0..catalog.n_groups)];
            for step in 1..spec.seq_len {
                let row = &matrix[groups[step - 1]];
                let next = if step + 1 == spec.seq_len {
                    argmax(row).0
                } else {
                    sample_row(row, &mut rng)
                };
                groups.push(next);
            }
            let items = groups
                .iter()
                .map(|g| {
                    catalog.items[*members[*g].choose(&mut rng).expect("groups are non-empty")]
                        .id
                        .clone()
                })
                .collect();
            UserSequence {
                user: format!("user_{u:0width$}"),
                items,
                groups,
                regime: *choices.choose(&mut rng).expect("non-empty"),
            }
        })
        .collect()
}

/// Picks `n` distinct groups other than `exclude`, optionally requiring a
/// minimum size.
fn other_groups(rng: &mut ChaCha8Rng, members: &[Vec<usize>], exclude: usize, n: usize, min_size: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..members.len())
        .filter(|g| *g != exclude && members[*g].len() >= min_size)
        .collect();
    pool.shuffle(rng);
    pool.truncate(n);
    pool
}

/// Builds one candidate set per user. Probabilities are drawn as weights
/// in the regime's shape, then normalized to sum to one. A regime whose
/// structure the catalog cannot supply falls back to `Strict` and the
/// user's label is updated.
pub fn emit_candidate_dumps(catalog: &Catalog, users: &mut [UserSequence], spec: &SynthSpec) -> Vec<DecodeRequest> {
    let mut rng = spec.rng(3);
    let members = catalog.members();
    users
        .iter_mut()
        .map(|user| {
            let n = user.items.len();
            let truth = user.items[n - 1].clone();
            let t_group = user.groups[n - 1];
            let truth_idx = members[t_group]
                .iter()
                .copied()
                .find(|i| catalog.items[*i].id == truth)
                .expect("truth comes from its group");

            let (regime, weighted) = build_candidates(&mut rng, catalog, &members, truth_idx, user.regime, spec);
            user.regime = regime;
            let total: f64 = weighted.iter().map(|(_, w)| w).sum();
            let mut candidates: Vec<CandidateItem> = weighted
                .into_iter()
                .map(|(i, w)| {
                    let item = &catalog.items[i];
                    CandidateItem::new(item.id.clone(), item.logits.clone(), w / total)
                })
                .collect();
            candidates.shuffle(&mut rng);
            DecodeRequest {
                request_id: user.user.clone(),
                history: user.items[..n - 1].to_vec(),
                ground_truth: Some(truth),
                candidates,
            }
        })
        .collect()
}

/// `(catalog index, weight)` pairs for one request.
fn build_candidates(
    rng: &mut ChaCha8Rng,
    catalog: &Catalog,
    members: &[Vec<usize>],
    truth_idx: usize,
    wanted: RequestRegime,
    spec: &SynthSpec,
) -> (RequestRegime, Vec<(usize, f64)>) {
    let t_group = catalog.items[truth_idx].group;
    let budget = spec.n_candidates;

    if wanted == RequestRegime::Distinct {
        let others = other_groups(rng, members, t_group, budget - 1, 1);
        let mut out = vec![(truth_idx, rng.gen_range(1.1..1.4))];
        for g in others {
            out.push((*members[g].choose(rng).expect("non-empty"), rng.gen_range(0.2..0.9)));
        }
        return (RequestRegime::Distinct, out);
    }

    // True group: the truth plus up to two siblings.
    let mut siblings: Vec<usize> = members[t_group].iter().copied().filter(|i| *i != truth_idx).collect();
    siblings.shuffle(rng);
    let t_size = 1 + siblings.len().min(rng.gen_range(1..=2)).min(budget / 2);
    let p_truth = rng.gen_range(1.1..1.4);
    let mut out = vec![(truth_idx, p_truth)];
    for s in &siblings[..t_size - 1] {
        out.push((*s, rng.gen_range(0.6..1.0)));
    }
    let t_avg = out.iter().map(|(_, w)| w).sum::<f64>() / t_size as f64;
    let mut remaining = budget - t_size;

    let mut regime = wanted;
    if t_size < 2 && matches!(regime, RequestRegime::Split | RequestRegime::Weak) {
        regime = RequestRegime::Strict;
    }
    if regime == RequestRegime::Split {
        let d_size = remaining.min(rng.gen_range(3..=4));
        match other_groups(rng, members, t_group, 1, d_size).first() {
            Some(&g) if d_size >= 3 => {
                let mut d: Vec<usize> = members[g].clone();
                d.shuffle(rng);
                // Just above the truth, so the cluster term has to decide.
                out.push((d[0], p_truth * rng.gen_range(1.02..1.05)));
                for i in &d[1..d_size] {
                    out.push((*i, t_avg * rng.gen_range(0.05..0.15)));
                }
                remaining -= d_size;
            }
            _ => regime = RequestRegime::Strict,
        }
    }
    if regime == RequestRegime::Weak {
        match other_groups(rng, members, t_group, 1, 1).first() {
            Some(&g) if remaining >= 1 => {
                // Above every member of T; T's total is at least 1.7 > 1.4 * 1.2.
                out.push((
                    *members[g].choose(rng).expect("non-empty"),
                    p_truth * rng.gen_range(1.01..1.2),
                ));
                remaining -= 1;
            }
            _ => regime = RequestRegime::Strict,
        }
    }

    let used: Vec<usize> = out.iter().map(|(i, _)| catalog.items[*i].group).collect();
    let mut pool: Vec<usize> = (0..members.len()).filter(|g| !used.contains(g)).collect();
    pool.shuffle(rng);
    let single_hi = if regime == RequestRegime::Strict { 0.9 } else { 0.6 };
    for g in pool.into_iter().take(remaining) {
        out.push((
            *members[g].choose(rng).expect("non-empty"),
            t_avg * rng.gen_range(0.2..single_hi),
        ));
    }
    (regime, out)
}

/// Probability-only facts about a candidate set, given true group labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeCheck {
    /// `mass(T)/|T|` beats every individual distractor.
    pub strict: bool,
    /// `mass(T)/|T|` beats the per-member mass of every distractor group.
    pub cluster_level: bool,
    /// `mass(T)` beats every distractor and some distractor beats every member of `T`.
    pub weak: bool,
    /// The single most likely candidate is outside `T`.
    pub greedy_misses: bool,
}

pub fn check_regime(req: &DecodeRequest, group_of: &BTreeMap<ItemId, usize>) -> Option<RegimeCheck> {
    let truth = req.ground_truth.as_ref()?;
    let t_group = *group_of.get(truth)?;
    let mut per_group: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut t_max = f64::NEG_INFINITY;
    let mut d_max = f64::NEG_INFINITY;
    for c in &req.candidates {
        let g = *group_of.get(&c.id)?;
        let e = per_group.entry(g).or_insert((0.0, 0));
        e.0 += c.prob;
        e.1 += 1;
        if g == t_group {
            t_max = t_max.max(c.prob);
        } else {
            d_max = d_max.max(c.prob);
        }
    }
    let (t_mass, t_n) = per_group[&t_group];
    let t_avg = t_mass / t_n as f64;
    let d_avg = per_group
        .iter()
        .filter(|(g, _)| **g != t_group)
        .map(|(_, (m, n))| m / *n as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    Some(RegimeCheck {
        strict: t_avg > d_max,
        cluster_level: t_avg > d_avg,
        weak: t_mass > d_max && d_max > t_max,
        greedy_misses: d_max > t_max,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: SynthSpec,
    pub catalog: Catalog,
    pub users: Vec<UserSequence>,
    pub requests: Vec<DecodeRequest>,
}

/// The whole corpus as a pure function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<Corpus, SynthError> {
    let catalog = generate_catalog(spec)?;
    let mut users = generate_interactions(&catalog, spec);
    let requests = emit_candidate_dumps(&catalog, &mut users, spec);
    Ok(Corpus {
        spec: spec.clone(),
        catalog,
        users,
        requests,
    })
}
