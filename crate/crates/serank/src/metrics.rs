//! Ranking quality: NDCG@k with gain 2^label - 1 and discount log2(pos + 1),
//! the MSLR/Web30K convention.

use crate::data::{Dataset, QueryGroup};
use crate::error::{Error, Result};
use crate::model::ScoringModel;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write;

pub fn gain(label: u32) -> f64 {
    (label as f64).exp2() - 1.0
}

fn discount(pos_zero_based: usize) -> f64 {
    1.0 / (pos_zero_based as f64 + 2.0).log2()
}

/// Documents in score-descending order; ties keep original index order
/// (stable sort), so results are deterministic.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

fn dcg_at_k(ordered_labels: impl Iterator<Item = u32>, k: usize) -> f64 {
    ordered_labels
        .take(k)
        .enumerate()
        .map(|(p, l)| gain(l) * discount(p))
        .sum()
}

/// NDCG@k of the score-induced order. `None` when the query has no relevant
/// documents (IDCG = 0); callers count those as skipped.
pub fn ndcg_at_k(scores: &[f64], labels: &[u32], k: usize) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores/labels length mismatch");
    assert!(!labels.is_empty() && k >= 1);
    let order = rank_order(scores);
    let dcg = dcg_at_k(order.iter().map(|&i| labels[i]), k);
    let mut ideal = labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(ideal.into_iter(), k);
    if idcg == 0.0 {
        None
    } else {
        Some(dcg / idcg)
    }
}

/// Mean NDCG@k over the queries of a dataset, for each requested k.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ndcg_at: BTreeMap<usize, f64>,
    /// Queries contributing to the means.
    pub query_count: usize,
    /// Queries with no relevant documents, excluded from the means.
    pub skipped: usize,
}

impl MetricReport {
    /// `k<TAB>ndcg_mean<TAB>query_count` per requested k.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        for (k, v) in &self.ndcg_at {
            writeln!(w, "{k}\t{v}\t{}", self.query_count)?;
        }
        Ok(())
    }
}

/// Score every query with `score_fn` (in parallel) and average NDCG@k over
/// queries with at least one relevant document. The reduction runs in a
/// fixed order, so results do not depend on the worker count.
pub fn evaluate_with<F>(score_fn: F, ds: &Dataset, ks: &[usize]) -> MetricReport
where
    F: Fn(&QueryGroup) -> Vec<f64> + Sync,
{
    let per_query: Vec<Option<Vec<f64>>> = ds
        .groups
        .par_iter()
        .map(|g| {
            let scores = score_fn(g);
            ks.iter()
                .map(|&k| ndcg_at_k(&scores, &g.labels, k))
                .collect::<Option<Vec<f64>>>()
        })
        .collect();

    let mut sums = vec![0.0; ks.len()];
    let mut query_count = 0;
    let mut skipped = 0;
    for entry in per_query {
        match entry {
            Some(values) => {
                for (s, v) in sums.iter_mut().zip(values) {
                    *s += v;
                }
                query_count += 1;
            }
            None => skipped += 1,
        }
    }
    let denom = query_count.max(1) as f64;
    MetricReport {
        ndcg_at: ks.iter().zip(sums).map(|(&k, s)| (k, s / denom)).collect(),
        query_count,
        skipped,
    }
}

/// Inference-mode evaluation of a model over a dataset (no document cap).
pub fn evaluate(model: &ScoringModel, ds: &Dataset, ks: &[usize]) -> Result<MetricReport> {
    if model.spec.input_width != ds.feature_count {
        return Err(Error::DimensionMismatch {
            op: "evaluate",
            lhs: vec![model.spec.input_width],
            rhs: vec![ds.feature_count],
        });
    }
    Ok(evaluate_with(
        |g| {
            model
                .score_group(g)
                .expect("width checked and query groups are non-empty")
        },
        ds,
        ks,
    ))
}
