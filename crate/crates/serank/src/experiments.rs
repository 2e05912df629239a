//! Analysis harnesses: ranking stability under random document masking, and
//! the squeeze/excitation ablation comparison.

use crate::data::{Dataset, QueryGroup};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, ndcg_at_k};
use crate::model::{init, ModelSpec, ScoringModel, Variant};
use crate::rng::{derive_seed_indexed, rng_from_seed};
use crate::train::{train, TrainConfig};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write;

/// NDCG over the same surviving documents under two scoring conditions:
/// scored with the full list present (`base`) versus scored alone
/// (`masked`). Per-document scorers give identical arms by construction.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub base_ndcg: BTreeMap<usize, f64>,
    pub masked_ndcg: BTreeMap<usize, f64>,
    pub mask_fraction: f64,
    pub seed: u64,
    /// Queries contributing to the means.
    pub evaluated: usize,
    /// Queries that would lose every document or whose survivors carry no
    /// relevant label.
    pub skipped: usize,
}

impl StabilityReport {
    /// `arm<TAB>k<TAB>ndcg` rows plus `#`-prefixed metadata.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        for (k, v) in &self.base_ndcg {
            writeln!(w, "base\t{k}\t{v}")?;
        }
        for (k, v) in &self.masked_ndcg {
            writeln!(w, "masked\t{k}\t{v}")?;
        }
        writeln!(
            w,
            "# mask_fraction={} seed={} evaluated={} skipped={}",
            self.mask_fraction, self.seed, self.evaluated, self.skipped
        )
    }
}

/// For each query, drop a seeded random `mask_fraction` of documents and
/// compare the NDCG of the survivors when scored with full context against
/// scoring them alone. The survivor selection is shared by both arms.
pub fn stability_test(
    model: &ScoringModel,
    ds: &Dataset,
    mask_fraction: f64,
    seed: u64,
    ks: &[usize],
) -> Result<StabilityReport> {
    if !(0.0..1.0).contains(&mask_fraction) {
        return Err(Error::Config(format!(
            "mask_fraction must lie in [0, 1), got {mask_fraction}"
        )));
    }
    if model.spec.input_width != ds.feature_count {
        return Err(Error::DimensionMismatch {
            op: "stability_test",
            lhs: vec![model.spec.input_width],
            rhs: vec![ds.feature_count],
        });
    }

    struct QueryArms {
        base: Vec<f64>,
        masked: Vec<f64>,
    }

    let per_query: Vec<Option<QueryArms>> = ds
        .groups
        .par_iter()
        .enumerate()
        .map(|(qi, group)| -> Result<Option<QueryArms>> {
            let l = group.doc_count();
            let n_masked = (mask_fraction * l as f64).round() as usize;
            if n_masked >= l {
                return Ok(None);
            }
            let mut indices: Vec<usize> = (0..l).collect();
            indices.shuffle(&mut rng_from_seed(derive_seed_indexed(
                seed,
                "stability-mask",
                qi as u64,
            )));
            let mut survivors: Vec<usize> = indices.into_iter().take(l - n_masked).collect();
            survivors.sort_unstable();

            let labels: Vec<u32> = survivors.iter().map(|&i| group.labels[i]).collect();
            if labels.iter().all(|&v| v == 0) {
                return Ok(None);
            }

            let full_scores = model.score_group(group)?;
            let base: Vec<f64> = survivors.iter().map(|&i| full_scores[i]).collect();

            let sub = QueryGroup {
                qid: group.qid.clone(),
                features: survivors.iter().map(|&i| group.features[i].clone()).collect(),
                labels: labels.clone(),
            };
            let masked = model.score_group(&sub)?;

            let arm = |scores: &[f64]| -> Vec<f64> {
                ks.iter()
                    .map(|&k| ndcg_at_k(scores, &labels, k).expect("relevant survivor exists"))
                    .collect()
            };
            Ok(Some(QueryArms {
                base: arm(&base),
                masked: arm(&masked),
            }))
        })
        .collect::<Result<_>>()?;

    let mut base_sums = vec![0.0; ks.len()];
    let mut masked_sums = vec![0.0; ks.len()];
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for entry in per_query {
        match entry {
            Some(arms) => {
                for (s, v) in base_sums.iter_mut().zip(&arms.base) {
                    *s += v;
                }
                for (s, v) in masked_sums.iter_mut().zip(&arms.masked) {
                    *s += v;
                }
                evaluated += 1;
            }
            None => skipped += 1,
        }
    }
    let denom = evaluated.max(1) as f64;
    let collect = |sums: Vec<f64>| -> BTreeMap<usize, f64> {
        ks.iter().zip(sums).map(|(&k, s)| (k, s / denom)).collect()
    };
    Ok(StabilityReport {
        base_ndcg: collect(base_sums),
        masked_ndcg: collect(masked_sums),
        mask_fraction,
        seed,
        evaluated,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub ndcg: BTreeMap<usize, f64>,
}

/// `variant<TAB>k<TAB>ndcg` rows.
pub fn write_ablation_tsv(rows: &[AblationRow], mut w: impl Write) -> std::io::Result<()> {
    for row in rows {
        for (k, v) in &row.ndcg {
            writeln!(w, "{}\t{k}\t{v}", row.variant)?;
        }
    }
    Ok(())
}

/// Train the SE-b model and its two block ablations with identical
/// seeds/config, then evaluate each on the test split.
pub fn ablation_suite(
    train_ds: &Dataset,
    valid_ds: &Dataset,
    test_ds: &Dataset,
    base_spec: &ModelSpec,
    cfg: &TrainConfig,
    ks: &[usize],
) -> Result<Vec<AblationRow>> {
    [
        Variant::SerankB,
        Variant::SerankNoSqueeze,
        Variant::SerankNoExcitation,
    ]
    .into_iter()
    .map(|variant| {
        let spec = ModelSpec {
            variant,
            ..base_spec.clone()
        };
        let outcome = train(init(&spec)?, train_ds, valid_ds, cfg)?;
        let report = evaluate(&outcome.best, test_ds, ks)?;
        Ok(AblationRow {
            variant: variant.name(),
            ndcg: report.ndcg_at,
        })
    })
    .collect()
}
