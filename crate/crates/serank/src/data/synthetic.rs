//! Seeded synthetic ranking tasks for desk-scale experiments and tests.
//!
//! `Plain` labels each document from its own features alone, so a univariate
//! scorer can solve it. `Contextual` grades each document by how close it
//! sits to its query's centroid, which is invisible to any per-document
//! scorer: the centroid varies per query, and within-query order depends on
//! it in a way that no function of a single row can recover.
//!
//! The task definition (grading weights, thresholds) derives from the base
//! seed alone, so train/valid/test splits of the same seed share one task
//! and differ only in their query streams.

use super::{Dataset, QueryGroup};
use crate::rng::{derive_seed, derive_seed_indexed, rng_from_seed};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    Plain,
    Contextual,
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    pub queries: usize,
    pub docs_per_query: usize,
    pub feature_count: usize,
    /// Task-level seed, shared by every split of one experiment.
    pub seed: u64,
    /// Split tag ("train", "valid", "test", ...) separating query streams.
    pub split: String,
}

impl SyntheticSpec {
    fn query_seed(&self, q: usize) -> u64 {
        let split_seed = derive_seed(self.seed, &format!("synthetic-split-{}", self.split));
        derive_seed_indexed(split_seed, "query", q as u64)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Dataset {
    match spec.task {
        SyntheticTask::Plain => generate_plain(spec),
        SyntheticTask::Contextual => generate_contextual(spec),
    }
}

/// Label grade proportions, most relevant first. Roughly mirrors the long
/// tail of graded judgments: few perfect hits, many irrelevant.
const GRADE_QUANTILES: [f64; 4] = [0.92, 0.80, 0.65, 0.40];

fn generate_plain(spec: &SyntheticSpec) -> Dataset {
    let c = spec.feature_count;
    let mut wrng = rng_from_seed(derive_seed(spec.seed, "synthetic-weights"));
    let weights: Vec<f64> = (0..c).map(|_| wrng.random_range(-1.0..1.0)).collect();

    // calibrate global grade thresholds on a one-off sample of scores
    let mut crng = rng_from_seed(derive_seed(spec.seed, "synthetic-calibration"));
    let mut sample: Vec<f64> = (0..20_000)
        .map(|_| {
            (0..c)
                .map(|j| weights[j] * crng.random_range(0.0..1.0))
                .sum()
        })
        .collect();
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let thresholds: Vec<f64> = GRADE_QUANTILES
        .iter()
        .map(|q| sample[((sample.len() as f64 * q) as usize).min(sample.len() - 1)])
        .collect();

    let groups = (0..spec.queries)
        .map(|q| {
            let mut rng = rng_from_seed(spec.query_seed(q));
            let features: Vec<Vec<f64>> = (0..spec.docs_per_query)
                .map(|_| (0..c).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let labels = features
                .iter()
                .map(|row| {
                    let t: f64 = row.iter().zip(&weights).map(|(x, w)| x * w).sum();
                    let mut grade = 4u32;
                    for th in &thresholds {
                        if t >= *th {
                            break;
                        }
                        grade -= 1;
                    }
                    grade
                })
                .collect();
            QueryGroup {
                qid: (q + 1).to_string(),
                features,
                labels,
            }
        })
        .collect();
    Dataset::new(groups, c)
}

fn generate_contextual(spec: &SyntheticSpec) -> Dataset {
    let c = spec.feature_count;
    let groups = (0..spec.queries)
        .map(|q| {
            let mut rng = rng_from_seed(spec.query_seed(q));
            let center: Vec<f64> = (0..c).map(|_| rng.random_range(0.25..0.75)).collect();
            let features: Vec<Vec<f64>> = (0..spec.docs_per_query)
                .map(|_| {
                    center
                        .iter()
                        .map(|&m| m + rng.random_range(-0.25..0.25))
                        .collect()
                })
                .collect();
            // relevance = closeness to the query centroid
            let mut order: Vec<usize> = (0..spec.docs_per_query).collect();
            let dist = |row: &[f64]| -> f64 {
                row.iter()
                    .zip(&center)
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum()
            };
            order.sort_by(|&a, &b| {
                dist(&features[a])
                    .partial_cmp(&dist(&features[b]))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let labels = rank_labels(spec.docs_per_query, &order);
            QueryGroup {
                qid: (q + 1).to_string(),
                features,
                labels,
            }
        })
        .collect();
    Dataset::new(groups, c)
}

/// Assign grades by rank position: the best 6.25% of documents get 4, then
/// 12.5% get 3, 19% get 2, 25% get 1, the rest 0. At 16 docs per query that
/// is 1/2/3/4/6 documents per grade.
fn rank_labels(l: usize, best_first: &[usize]) -> Vec<u32> {
    let cut = |fraction: f64| -> usize { (l as f64 * fraction).ceil() as usize };
    let cutoffs = [cut(0.0625), cut(0.1875), cut(0.375), cut(0.625)];
    let mut labels = vec![0u32; l];
    for (pos, &doc) in best_first.iter().enumerate() {
        labels[doc] = match pos {
            p if p < cutoffs[0] => 4,
            p if p < cutoffs[1] => 3,
            p if p < cutoffs[2] => 2,
            p if p < cutoffs[3] => 1,
            _ => 0,
        };
    }
    labels
}
