//! Leave-one-out splitting and top-K ranking metrics.
//!
//! Only the supplied candidate set is ranked. A truth that is not among the
//! candidates simply scores 0 on every metric; there is no whole-catalog
//! softmax.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{Ranker, StrategySpec};
use crate::error::{Error, Result};
use crate::model::{DecodeRequest, ItemId, RankedList};

/// One held-out prediction target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldOut {
    pub user: String,
    pub history: Vec<ItemId>,
    pub truth: ItemId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaveOneOut {
    /// Training prefix per user: everything before the validation item.
    pub train: Vec<(String, Vec<ItemId>)>,
    pub validation: Vec<HeldOut>,
    pub test: Vec<HeldOut>,
    /// Users dropped for having fewer than three interactions.
    pub excluded: usize,
}

/// Last interaction is the test target, second-to-last the validation target.
pub fn leave_one_out_split<'a, I>(sequences: I) -> LeaveOneOut
where
    I: IntoIterator<Item = (&'a str, &'a [ItemId])>,
{
    let mut out = LeaveOneOut::default();
    for (user, seq) in sequences {
        let n = seq.len();
        if n < 3 {
            out.excluded += 1;
            continue;
        }
        out.train.push((user.to_owned(), seq[..n - 2].to_vec()));
        out.validation.push(HeldOut {
            user: user.to_owned(),
            history: seq[..n - 2].to_vec(),
            truth: seq[n - 2].clone(),
        });
        out.test.push(HeldOut {
            user: user.to_owned(),
            history: seq[..n - 1].to_vec(),
            truth: seq[n - 1].clone(),
        });
    }
    if out.excluded > 0 {
        log::warn!("leave-one-out: excluded {} sequence(s) shorter than 3", out.excluded);
    }
    out
}

fn rank_within(ranking: &RankedList, truth: &ItemId, k: usize) -> Option<usize> {
    assert!(k >= 1, "k must be at least 1");
    ranking.rank_of(truth).filter(|r| *r <= k)
}

pub fn hit_rate_at_k(ranking: &RankedList, truth: &ItemId, k: usize) -> f64 {
    rank_within(ranking, truth, k).map_or(0.0, |_| 1.0)
}

/// `1 / log2(rank + 1)`; the ideal DCG is 1 with a single relevant item.
pub fn ndcg_at_k(ranking: &RankedList, truth: &ItemId, k: usize) -> f64 {
    rank_within(ranking, truth, k).map_or(0.0, |r| 1.0 / ((r + 1) as f64).log2())
}

pub fn mrr_at_k(ranking: &RankedList, truth: &ItemId, k: usize) -> f64 {
    rank_within(ranking, truth, k).map_or(0.0, |r| 1.0 / r as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub hr: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

impl MetricTriple {
    pub fn of(ranking: &RankedList, truth: &ItemId, k: usize) -> Self {
        MetricTriple {
            hr: hit_rate_at_k(ranking, truth, k),
            ndcg: ndcg_at_k(ranking, truth, k),
            mrr: mrr_at_k(ranking, truth, k),
        }
    }
}

pub const DEFAULT_KS: [usize; 2] = [3, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: StrategySpec,
    pub per_k: BTreeMap<usize, MetricTriple>,
    pub n_requests: usize,
}

impl EvalReport {
    pub fn metric(&self, k: usize) -> Option<&MetricTriple> {
        self.per_k.get(&k)
    }

    /// Averages per-request metrics. Sums run in request order, so the
    /// result does not depend on how rankings were computed.
    pub fn from_rankings(strategy: StrategySpec, pairs: &[(RankedList, ItemId)], ks: &[usize]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Strategy("no requests to evaluate".into()));
        }
        let n = pairs.len() as f64;
        let per_k = ks
            .iter()
            .map(|&k| {
                let mut sum = MetricTriple::default();
                for (ranking, truth) in pairs {
                    let m = MetricTriple::of(ranking, truth, k);
                    sum.hr += m.hr;
                    sum.ndcg += m.ndcg;
                    sum.mrr += m.mrr;
                }
                let avg = MetricTriple {
                    hr: sum.hr / n,
                    ndcg: sum.ndcg / n,
                    mrr: sum.mrr / n,
                };
                (k, avg)
            })
            .collect();
        Ok(EvalReport {
            strategy,
            per_k,
            n_requests: pairs.len(),
        })
    }

    /// Column header in `HR@k NDCG@k MRR@k` order, cutoffs ascending.
    pub fn header(ks: impl IntoIterator<Item = usize>) -> Vec<String> {
        ks.into_iter()
            .flat_map(|k| [format!("HR@{k}"), format!("NDCG@{k}"), format!("MRR@{k}")])
            .collect()
    }

    pub fn row(&self) -> Vec<f64> {
        self.per_k.values().flat_map(|m| [m.hr, m.ndcg, m.mrr]).collect()
    }
}

/// Aligned plain-text table, one row per report.
pub fn format_table(reports: &[(String, &EvalReport)]) -> String {
    let ks: Vec<usize> = reports
        .first()
        .map(|(_, r)| r.per_k.keys().copied().collect())
        .unwrap_or_default();
    let header = EvalReport::header(ks);
    let label_w = reports.iter().map(|(l, _)| l.len()).chain([8]).max().unwrap_or(8);
    let col_w = header.iter().map(String::len).chain([6]).max().unwrap_or(6);

    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "strategy");
    for h in &header {
        let _ = write!(out, "  {h:>col_w$}");
    }
    out.push('\n');
    for (label, report) in reports {
        let _ = write!(out, "{label:<label_w$}");
        for v in report.row() {
            let _ = write!(out, "  {v:>col_w$.4}");
        }
        out.push('\n');
    }
    out
}

/// Ranks each request and pairs the ranking with its truth. Requests run in
/// parallel on the current rayon pool; output order follows input order.
pub fn rank_all(requests: &[DecodeRequest], ranker: &Ranker<'_>) -> Result<Vec<(RankedList, ItemId)>> {
    if let Some(r) = requests.iter().find(|r| r.ground_truth.is_none()) {
        return Err(Error::MissingGroundTruth(r.request_id.clone()));
    }
    let results: Vec<Result<(RankedList, ItemId)>> = requests
        .par_iter()
        .map(|r| {
            let truth = r.ground_truth.clone().expect("checked above");
            ranker.rank(r).map(|ranking| (ranking, truth))
        })
        .collect();
    // Sequential pass so the reported error is always the earliest one.
    results.into_iter().collect()
}

pub fn evaluate(requests: &[DecodeRequest], ranker: &Ranker<'_>, ks: &[usize]) -> Result<EvalReport> {
    let pairs = rank_all(requests, ranker)?;
    EvalReport::from_rankings(ranker.spec, &pairs, ks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::StrategyKind;
    use crate::model::ScoredItem;
    use proptest::prelude::*;

    fn ranking(ids: &[&str]) -> RankedList {
        RankedList {
            request_id: "r".into(),
            items: ids
                .iter()
                .enumerate()
                .map(|(i, id)| ScoredItem {
                    id: ItemId::new(*id),
                    base_prob: 0.0,
                    phi: 0.0,
                    score: -(i as f64),
                    cluster_index: i,
                })
                .collect(),
            effective_temperature: 1.0,
        }
    }

    fn ids(v: &[&str]) -> Vec<ItemId> {
        v.iter().map(|s| ItemId::new(*s)).collect()
    }

    #[test]
    fn split_examples() {
        let seq = ids(&["a", "b", "c", "d"]);
        let short = ids(&["x", "y"]);
        let s = leave_one_out_split([("u1", seq.as_slice()), ("u2", short.as_slice())]);
        assert_eq!(s.excluded, 1);
        assert_eq!(s.test.len(), 1);
        assert_eq!(s.test[0].history, ids(&["a", "b", "c"]));
        assert_eq!(s.test[0].truth, ItemId::new("d"));
        assert_eq!(s.validation[0].history, ids(&["a", "b"]));
        assert_eq!(s.validation[0].truth, ItemId::new("c"));
        assert_eq!(s.train[0].1, ids(&["a", "b"]));

        let users: Vec<(String, Vec<ItemId>)> = (0..100).map(|u| (format!("u{u}"), ids(&["a", "b", "c"]))).collect();
        let s = leave_one_out_split(users.iter().map(|(u, s)| (u.as_str(), s.as_slice())));
        assert_eq!(s.test.len(), 100);
        assert_eq!(s.excluded, 0);
    }

    #[test]
    fn metric_examples() {
        let r = ranking(&["t", "a", "b", "c", "d"]);
        let t = ItemId::new("t");
        assert_eq!(hit_rate_at_k(&r, &t, 3), 1.0);
        assert_eq!(ndcg_at_k(&r, &t, 3), 1.0);
        assert_eq!(mrr_at_k(&r, &t, 3), 1.0);

        let r2 = ranking(&["a", "t", "b"]);
        assert!((ndcg_at_k(&r2, &t, 3) - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((ndcg_at_k(&r2, &t, 3) - 0.630_929_753_571_457_4).abs() < 1e-12);
        assert_eq!(mrr_at_k(&r2, &t, 3), 0.5);

        let r3 = ranking(&["a", "b", "t"]);
        assert!((ndcg_at_k(&r3, &t, 3) - 0.5).abs() < 1e-15);

        let r4 = ranking(&["a", "b", "c", "t"]);
        assert_eq!(hit_rate_at_k(&r4, &t, 3), 0.0);
        assert_eq!(mrr_at_k(&r4, &t, 3), 0.0);
        assert_eq!(hit_rate_at_k(&ranking(&["a"]), &t, 3), 0.0);
    }

    fn spec() -> StrategySpec {
        StrategySpec::new(StrategyKind::Greedy)
    }

    #[test]
    fn perfect_and_hopeless_rankers() {
        let pairs: Vec<_> = (0..10).map(|_| (ranking(&["t", "a"]), ItemId::new("t"))).collect();
        let rep = EvalReport::from_rankings(spec(), &pairs, &DEFAULT_KS).unwrap();
        assert!(rep.row().iter().all(|v| *v == 1.0));
        assert_eq!(rep.row().len(), 6);

        let pairs: Vec<_> = (0..10).map(|_| (ranking(&["a", "b"]), ItemId::new("t"))).collect();
        let rep = EvalReport::from_rankings(spec(), &pairs, &DEFAULT_KS).unwrap();
        assert!(rep.row().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn table_layout() {
        let pairs = vec![(ranking(&["a", "t"]), ItemId::new("t"))];
        let rep = EvalReport::from_rankings(spec(), &pairs, &DEFAULT_KS).unwrap();
        let table = format_table(&[("greedy".into(), &rep)]);
        let lines: Vec<&str> = table.lines().collect();
        let cols: Vec<&str> = lines[0].split_whitespace().collect();
        assert_eq!(cols, ["strategy", "HR@3", "NDCG@3", "MRR@3", "HR@5", "NDCG@5", "MRR@5"]);
        assert!(lines[1].starts_with("greedy"));
        assert!(lines[1].contains("0.6309"));
    }

    #[test]
    fn missing_truth_is_named() {
        let req = DecodeRequest {
            request_id: "nobody".into(),
            history: vec![],
            ground_truth: None,
            candidates: vec![crate::model::CandidateItem::new("a", vec![1.0], 1.0)],
        };
        let ranker = Ranker::new(spec(), Default::default(), None).unwrap();
        assert_eq!(
            evaluate(&[req], &ranker, &DEFAULT_KS).unwrap_err(),
            Error::MissingGroundTruth("nobody".into())
        );
    }

    /// Reference implementation: walk the list by hand, no shared helpers.
    fn brute(list: &[String], truth: &str, k: usize) -> (f64, f64, f64) {
        for (i, id) in list.iter().enumerate().take(k) {
            if id == truth {
                let r = (i + 1) as f64;
                return (1.0, std::f64::consts::LN_2 / (r + 1.0).ln(), 1.0 / r);
            }
        }
        (0.0, 0.0, 0.0)
    }

    fn arb_case() -> impl Strategy<Value = (Vec<String>, String, usize)> {
        (
            proptest::sample::subsequence((0..30).collect::<Vec<u32>>(), 0..30).prop_shuffle(),
            0u32..35,
            1usize..12,
        )
            .prop_map(|(list, t, k)| (list.into_iter().map(|i| format!("i{i}")).collect(), format!("i{t}"), k))
    }

    proptest! {
        #[test]
        fn metrics_match_reference_and_are_ordered((list, truth, k) in arb_case()) {
            let refs: Vec<&str> = list.iter().map(String::as_str).collect();
            let r = ranking(&refs);
            let t = ItemId::new(truth.clone());
            let (hr, ndcg, mrr) = brute(&list, &truth, k);
            prop_assert!((hit_rate_at_k(&r, &t, k) - hr).abs() < 1e-12);
            prop_assert!((ndcg_at_k(&r, &t, k) - ndcg).abs() < 1e-12);
            prop_assert!((mrr_at_k(&r, &t, k) - mrr).abs() < 1e-12);
            let m = MetricTriple::of(&r, &t, k);
            prop_assert!(m.mrr <= m.ndcg && m.ndcg <= m.hr);
        }

        #[test]
        fn items_below_the_truth_do_not_matter((list, truth, k) in arb_case(), tail in 0usize..5) {
            let refs: Vec<&str> = list.iter().map(String::as_str).collect();
            let t = ItemId::new(truth.clone());
            let Some(pos) = refs.iter().position(|x| *x == truth) else { return Ok(()); };
            let mut cut: Vec<&str> = refs[..=pos].to_vec();
            let extra: Vec<String> = (0..tail).map(|i| format!("z{i}")).collect();
            cut.extend(extra.iter().map(String::as_str));
            prop_assert_eq!(MetricTriple::of(&ranking(&refs), &t, k), MetricTriple::of(&ranking(&cut), &t, k));
        }
    }
}
