//! Retrieval metrics over the rank of the human-derived answer (MRR,
//! recall@k, mean rank) and over dense relevance (NDCG).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{Dataset, QuestionRecord};
use crate::rankings::RankVector;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no ranks to evaluate")]
    Empty,
    #[error("rank {rank} at position {index} is below 1")]
    RankBelowOne { index: usize, rank: usize },
    #[error("recall cut-off must be at least 1")]
    ZeroCutoff,
    #[error("relevance has {found} entries for {expected} candidates")]
    LengthMismatch { expected: usize, found: usize },
    #[error("relevance[{index}] = {value} is outside [0, 1]")]
    RelevanceRange { index: usize, value: f64 },
    #[error("no ranking for question {0:?}")]
    MissingQuestion(String),
}

fn check_ranks(human_ranks: &[usize]) -> Result<(), MetricError> {
    if human_ranks.is_empty() {
        return Err(MetricError::Empty);
    }
    match human_ranks.iter().position(|&r| r < 1) {
        Some(index) => Err(MetricError::RankBelowOne { index, rank: 0 }),
        None => Ok(()),
    }
}

/// Mean reciprocal rank: `(1/d) * sum(1/r_i)`.
pub fn mrr(human_ranks: &[usize]) -> Result<f64, MetricError> {
    check_ranks(human_ranks)?;
    let sum: f64 = human_ranks.iter().map(|&r| 1.0 / r as f64).sum();
    Ok(sum / human_ranks.len() as f64)
}

/// Fraction of questions whose human answer is ranked within the top `k`.
pub fn recall_at_k(human_ranks: &[usize], k: usize) -> Result<f64, MetricError> {
    check_ranks(human_ranks)?;
    if k == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    let hits = human_ranks.iter().filter(|&&r| r <= k).count();
    Ok(hits as f64 / human_ranks.len() as f64)
}

pub fn mean_rank(human_ranks: &[usize]) -> Result<f64, MetricError> {
    check_ranks(human_ranks)?;
    let sum: f64 = human_ranks.iter().map(|&r| r as f64).sum();
    Ok(sum / human_ranks.len() as f64)
}

/// NDCG over the `K` positively-relevant candidates, `K = |{i : rel_i > 0}|`.
///
/// The gain at position `i` (1-based) is `rel / log2(i + 1)`; the ideal gain
/// uses relevance sorted descending. Returns 0 when `K = 0`.
pub fn ndcg_question(predicted: &RankVector, relevance: &[f64]) -> Result<f64, MetricError> {
    if relevance.len() != predicted.len() {
        return Err(MetricError::LengthMismatch {
            expected: predicted.len(),
            found: relevance.len(),
        });
    }
    if let Some((index, &value)) = relevance
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(MetricError::RelevanceRange { index, value });
    }
    let k = relevance.iter().filter(|&&s| s > 0.0).count();
    if k == 0 {
        return Ok(0.0);
    }
    let discounted = |gains: &mut dyn Iterator<Item = f64>| -> f64 {
        gains
            .take(k)
            .enumerate()
            .map(|(pos, s)| s / ((pos + 2) as f64).log2())
            .sum()
    };
    let dcg = discounted(&mut predicted.order().iter().map(|&c| relevance[c]));
    let mut ideal = relevance.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = discounted(&mut ideal.into_iter());
    Ok(dcg / idcg)
}

/// How questions with no positively-relevant candidate enter the NDCG mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EmptyRelevance {
    /// Count them with NDCG 0.
    #[default]
    Zero,
    /// Leave them out of the mean.
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub recall_cutoffs: Vec<usize>,
    pub empty_relevance: EmptyRelevance,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            recall_cutoffs: vec![1, 5, 10],
            empty_relevance: EmptyRelevance::Zero,
        }
    }
}

/// Per-question outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuestionOutcome {
    pub gt_rank: usize,
    /// `None` when the question has no dense annotation, or has no relevant
    /// candidate and empty questions are skipped.
    pub ndcg: Option<f64>,
}

pub fn evaluate_question(
    ranking: &RankVector,
    question: &QuestionRecord,
    opts: &EvalOptions,
) -> Result<QuestionOutcome, MetricError> {
    if ranking.len() != question.candidate_count {
        return Err(MetricError::LengthMismatch {
            expected: question.candidate_count,
            found: ranking.len(),
        });
    }
    let ndcg = match &question.relevance {
        Some(rel) => {
            let empty = rel.iter().all(|&s| s <= 0.0);
            if empty && opts.empty_relevance == EmptyRelevance::Skip {
                None
            } else {
                Some(ndcg_question(ranking, rel)?)
            }
        }
        None => None,
    };
    Ok(QuestionOutcome {
        gt_rank: ranking.rank(question.gt_index),
        ndcg,
    })
}

/// Dataset-level metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub d: usize,
    pub mrr: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub mean_rank: f64,
    pub ndcg: Option<f64>,
    pub avg_mrr_set_size: Option<f64>,
}

impl MetricsReport {
    /// Aggregates per-question outcomes, summing in the given order.
    pub fn from_outcomes(
        outcomes: &[QuestionOutcome],
        opts: &EvalOptions,
    ) -> Result<Self, MetricError> {
        let ranks: Vec<usize> = outcomes.iter().map(|o| o.gt_rank).collect();
        let recall_at = opts
            .recall_cutoffs
            .iter()
            .map(|&k| Ok((k, recall_at_k(&ranks, k)?)))
            .collect::<Result<_, MetricError>>()?;
        let ndcgs: Vec<f64> = outcomes.iter().filter_map(|o| o.ndcg).collect();
        let ndcg = (!ndcgs.is_empty()).then(|| ndcgs.iter().sum::<f64>() / ndcgs.len() as f64);
        Ok(Self {
            d: ranks.len(),
            mrr: mrr(&ranks)?,
            recall_at,
            mean_rank: mean_rank(&ranks)?,
            ndcg,
            avg_mrr_set_size: None,
        })
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }

    /// Flat key/value table, one metric per line.
    pub fn to_table(&self) -> String {
        let mut rows = vec![("questions".to_string(), self.d.to_string())];
        rows.push(("mrr".into(), format!("{:.6}", self.mrr)));
        for (k, v) in &self.recall_at {
            rows.push((format!("r@{k}"), format!("{v:.6}")));
        }
        rows.push(("mean_rank".into(), format!("{:.6}", self.mean_rank)));
        if let Some(ndcg) = self.ndcg {
            rows.push(("ndcg".into(), format!("{ndcg:.6}")));
        }
        if let Some(size) = self.avg_mrr_set_size {
            rows.push(("avg_mrr_set_size".into(), format!("{size:.6}")));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }

    /// Flat JSON object with `r@k` keys, suitable for one JSONL line.
    pub fn to_json_record(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("d".into(), self.d.into());
        map.insert("mrr".into(), self.mrr.into());
        for (k, v) in &self.recall_at {
            map.insert(format!("r@{k}"), (*v).into());
        }
        map.insert("mean_rank".into(), self.mean_rank.into());
        if let Some(ndcg) = self.ndcg {
            map.insert("ndcg".into(), ndcg.into());
        }
        if let Some(size) = self.avg_mrr_set_size {
            map.insert("avg_mrr_set_size".into(), size.into());
        }
        serde_json::Value::Object(map)
    }
}

/// Evaluates one ranking per question against the dataset.
///
/// Per-question work runs on the current rayon pool; the reduction follows
/// dataset order so results do not depend on scheduling.
pub fn evaluate<M>(
    rankings: &M,
    ds: &Dataset,
    opts: &EvalOptions,
) -> Result<MetricsReport, MetricError>
where
    M: RankingLookup + Sync,
{
    let outcomes = ds
        .questions()
        .par_iter()
        .map(|q| {
            let ranking = rankings
                .ranking(&q.question_id)
                .ok_or_else(|| MetricError::MissingQuestion(q.question_id.clone()))?;
            evaluate_question(ranking, q, opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    MetricsReport::from_outcomes(&outcomes, opts)
}

/// Anything that can hand out a ranking per question id.
pub trait RankingLookup {
    fn ranking(&self, question_id: &str) -> Option<&RankVector>;
}

impl RankingLookup for BTreeMap<String, RankVector> {
    fn ranking(&self, question_id: &str) -> Option<&RankVector> {
        self.get(question_id)
    }
}

impl RankingLookup for std::collections::HashMap<String, RankVector> {
    fn ranking(&self, question_id: &str) -> Option<&RankVector> {
        self.get(question_id)
    }
}

impl RankingLookup for crate::rankings::ModelRun {
    fn ranking(&self, question_id: &str) -> Option<&RankVector> {
        self.ranks(question_id).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    /// Literal transcription: walk positions 1..=K and divide by log2(i+1);
    /// the ideal ordering is found by trying every permutation.
    fn ndcg_oracle(order: &[usize], rel: &[f64]) -> f64 {
        let k = rel.iter().filter(|&&s| s > 0.0).count();
        if k == 0 {
            return 0.0;
        }
        let dcg_of = |perm: &[usize]| {
            let mut total = 0.0;
            for i in 1..=k {
                total += rel[perm[i - 1]] / ((i + 1) as f64).log2();
            }
            total
        };
        let mut best = f64::MIN;
        let mut perm: Vec<usize> = (0..rel.len()).collect();
        permute(&mut perm, 0, &mut |p| best = best.max(dcg_of(p)));
        dcg_of(order) / best
    }

    fn permute(items: &mut Vec<usize>, start: usize, visit: &mut dyn FnMut(&[usize])) {
        if start == items.len() {
            visit(items);
            return;
        }
        for i in start..items.len() {
            items.swap(start, i);
            permute(items, start + 1, visit);
            items.swap(start, i);
        }
    }

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr(&[1]).unwrap(), 1.0);
        assert!((mrr(&[1, 2, 4]).unwrap() - 7.0 / 12.0).abs() < EPS);
        assert!((mrr(&[10, 10]).unwrap() - 0.1).abs() < EPS);
        assert!(matches!(mrr(&[]), Err(MetricError::Empty)));
        assert!(matches!(
            mrr(&[1, 0]),
            Err(MetricError::RankBelowOne { index: 1, .. })
        ));
    }

    #[test]
    fn recall_examples() {
        assert!((recall_at_k(&[1, 2, 4], 1).unwrap() - 1.0 / 3.0).abs() < EPS);
        assert_eq!(recall_at_k(&[1, 2, 4], 5).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[6], 5).unwrap(), 0.0);
        assert!(matches!(recall_at_k(&[1], 0), Err(MetricError::ZeroCutoff)));
    }

    #[test]
    fn mean_rank_examples() {
        assert_eq!(mean_rank(&[1]).unwrap(), 1.0);
        assert!((mean_rank(&[1, 2, 4]).unwrap() - 7.0 / 3.0).abs() < EPS);
        assert_eq!(mean_rank(&[3, 5]).unwrap(), 4.0);
    }

    #[test]
    fn ndcg_worked_example() {
        // Relevances (1, 0, 2/3) land at positions 1, 2, 3; K = 2.
        let rel = [1.0, 0.0, 2.0 / 3.0];
        let predicted = RankVector::from_order(vec![0, 1, 2]).unwrap();
        let expected = ndcg_oracle(&[0, 1, 2], &rel);
        let got = ndcg_question(&predicted, &rel).unwrap();
        assert!((got - expected).abs() < EPS);
        assert!((got - 0.703_918).abs() < 1e-6, "{got}");
    }

    #[test]
    fn ndcg_edge_cases() {
        let rel = [0.2, 1.0, 0.0, 0.6];
        let ideal = RankVector::from_order(vec![1, 3, 0, 2]).unwrap();
        assert!((ndcg_question(&ideal, &rel).unwrap() - 1.0).abs() < EPS);
        let any = RankVector::from_order(vec![2, 0, 1]).unwrap();
        assert_eq!(ndcg_question(&any, &[0.0; 3]).unwrap(), 0.0);
        assert!(matches!(
            ndcg_question(&any, &[0.0; 2]),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ndcg_question(&any, &[0.0, 1.2, 0.0]),
            Err(MetricError::RelevanceRange { index: 1, .. })
        ));
    }

    fn question(id: &str, n: usize, gt: usize, rel: Option<Vec<f64>>) -> QuestionRecord {
        QuestionRecord::new(id, n, gt, rel).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let opts = EvalOptions::default();
        let ds =
            Dataset::from_records(vec![question("q", 3, 1, Some(vec![0.0, 1.0, 0.5]))]).unwrap();
        let rankings: BTreeMap<_, _> = [(
            "q".to_string(),
            RankVector::from_order(vec![1, 2, 0]).unwrap(),
        )]
        .into();
        let report = evaluate(&rankings, &ds, &opts).unwrap();
        assert_eq!(report.mrr, 1.0);
        assert!((report.ndcg.unwrap() - 1.0).abs() < EPS);

        let ds = Dataset::from_records(vec![question("a", 3, 0, None), question("b", 3, 0, None)])
            .unwrap();
        let rankings: BTreeMap<_, _> = [
            ("a".to_string(), RankVector::new(vec![1, 2, 3]).unwrap()),
            ("b".to_string(), RankVector::new(vec![2, 1, 3]).unwrap()),
        ]
        .into();
        let report = evaluate(&rankings, &ds, &opts).unwrap();
        assert_eq!(report.mrr, 0.75);
        assert_eq!(report.mean_rank, 1.5);
        assert_eq!(report.ndcg, None);

        let mut partial = rankings.clone();
        partial.remove("b");
        assert!(matches!(
            evaluate(&partial, &ds, &opts),
            Err(MetricError::MissingQuestion(q)) if q == "b"
        ));
    }

    #[test]
    fn empty_relevance_policy() {
        let ds = Dataset::from_records(vec![
            question("a", 2, 0, Some(vec![1.0, 0.0])),
            question("b", 2, 0, Some(vec![0.0, 0.0])),
        ])
        .unwrap();
        let rankings: BTreeMap<_, _> = [
            ("a".to_string(), RankVector::new(vec![1, 2]).unwrap()),
            ("b".to_string(), RankVector::new(vec![1, 2]).unwrap()),
        ]
        .into();
        let zero = evaluate(&rankings, &ds, &EvalOptions::default()).unwrap();
        assert_eq!(zero.ndcg, Some(0.5));
        let skip = EvalOptions {
            empty_relevance: EmptyRelevance::Skip,
            ..EvalOptions::default()
        };
        assert_eq!(evaluate(&rankings, &ds, &skip).unwrap().ndcg, Some(1.0));
    }

    #[test]
    fn table_and_record() {
        let report = MetricsReport {
            d: 2,
            mrr: 0.75,
            recall_at: [(1, 0.5), (5, 1.0)].into(),
            mean_rank: 1.5,
            ndcg: None,
            avg_mrr_set_size: Some(2.0),
        };
        let table = report.to_table();
        assert!(table.contains("mrr               0.750000"), "{table}");
        assert!(!table.contains("ndcg "));
        let record = report.to_json_record();
        assert_eq!(record["r@5"], 1.0);
        assert_eq!(record["avg_mrr_set_size"], 2.0);
    }

    fn arb_instance(max_n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
        (1..=max_n).prop_flat_map(|n| {
            (
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..=1.0], n),
            )
        })
    }

    proptest! {
        #[test]
        fn ndcg_matches_oracle((order, rel) in arb_instance(6)) {
            let got = ndcg_question(&RankVector::from_order(order.clone()).unwrap(), &rel).unwrap();
            prop_assert!((got - ndcg_oracle(&order, &rel)).abs() < EPS);
        }

        #[test]
        fn ndcg_bounded((order, rel) in arb_instance(30)) {
            let got = ndcg_question(&RankVector::from_order(order).unwrap(), &rel).unwrap();
            prop_assert!((0.0..=1.0 + EPS).contains(&got));
        }

        #[test]
        fn ndcg_invariant_under_equal_relevance_swaps(
            (order, rel) in arb_instance(12),
            a in 0usize..12,
            b in 0usize..12,
        ) {
            let n = order.len();
            let (a, b) = (a % n, b % n);
            let mut rel = rel;
            rel[order[b]] = rel[order[a]];
            let mut swapped = order.clone();
            swapped.swap(a, b);
            let x = ndcg_question(&RankVector::from_order(order).unwrap(), &rel).unwrap();
            let y = ndcg_question(&RankVector::from_order(swapped).unwrap(), &rel).unwrap();
            prop_assert!((x - y).abs() < EPS);
        }

        #[test]
        fn rank_metrics_only_see_gt((order, _) in arb_instance(10), gt in 0usize..10, seed in 0usize..100) {
            let n = order.len();
            let gt = gt % n;
            let q = question("q", n, gt, None);
            let base = RankVector::from_order(order.clone()).unwrap();
            // Rotate every non-GT candidate among the non-GT positions.
            let pos_gt = base.rank(gt) - 1;
            let others: Vec<usize> = order.iter().copied().filter(|&c| c != gt).collect();
            let mut perturbed = Vec::with_capacity(n);
            let shift = if others.is_empty() { 0 } else { seed % others.len() };
            let mut rotated = others.clone();
            rotated.rotate_left(shift);
            let mut it = rotated.into_iter();
            for pos in 0..n {
                perturbed.push(if pos == pos_gt { gt } else { it.next().unwrap() });
            }
            let opts = EvalOptions::default();
            let a = evaluate_question(&base, &q, &opts).unwrap();
            let b = evaluate_question(&RankVector::from_order(perturbed).unwrap(), &q, &opts).unwrap();
            prop_assert_eq!(a.gt_rank, b.gt_rank);
        }

        #[test]
        fn report_orderings(ranks in proptest::collection::vec(1usize..20, 1..50)) {
            let outcomes: Vec<_> = ranks.iter().map(|&r| QuestionOutcome { gt_rank: r, ndcg: None }).collect();
            let report = MetricsReport::from_outcomes(&outcomes, &EvalOptions::default()).unwrap();
            prop_assert!(report.mrr >= report.recall(1).unwrap());
            prop_assert!(report.recall(1) <= report.recall(5));
            prop_assert!(report.recall(5) <= report.recall(10));
            prop_assert!(report.mean_rank >= 1.0);
        }
    }
}
