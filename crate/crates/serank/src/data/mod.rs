//! LETOR-format ranking data: parsing, normalization, per-query document
//! caps, batching, and a seeded synthetic dataset generator.

mod batch;
mod letor;
mod stats;
mod synthetic;

pub use batch::{batch_iter, Batch, BatchIter};
pub use letor::{parse_letor, parse_letor_reader, serialize_letor, write_letor};
pub use stats::{load_stats, save_stats, ChannelStats};
pub use synthetic::{generate_synthetic, SyntheticSpec, SyntheticTask};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use rand::seq::SliceRandom;

/// One query's documents: the unit of scoring, losses, and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub qid: String,
    /// Raw (unnormalized) feature rows; every row has the dataset's C values.
    pub features: Vec<Vec<f64>>,
    /// Graded relevance in [0, 4], or {0, 1} for click data.
    pub labels: Vec<u32>,
}

impl QueryGroup {
    pub fn doc_count(&self) -> usize {
        self.labels.len()
    }

    /// True when at least one document has a nonzero label.
    pub fn has_relevant(&self) -> bool {
        self.labels.iter().any(|&l| l > 0)
    }
}

/// An ordered collection of query groups sharing one feature schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub groups: Vec<QueryGroup>,
    pub feature_count: usize,
    /// Normalization stats this dataset was transformed with, when any.
    pub stats: Option<ChannelStats>,
}

impl Dataset {
    pub fn new(groups: Vec<QueryGroup>, feature_count: usize) -> Self {
        Dataset {
            groups,
            feature_count,
            stats: None,
        }
    }

    pub fn query_count(&self) -> usize {
        self.groups.len()
    }

    /// Training-split channel statistics (population mean and standard
    /// deviation over every document row).
    pub fn compute_stats(&self) -> ChannelStats {
        let c = self.feature_count;
        let mut mean = vec![0.0; c];
        let mut count = 0usize;
        for g in &self.groups {
            for row in &g.features {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            count += g.doc_count();
        }
        let n = count.max(1) as f64;
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; c];
        for g in &self.groups {
            for row in &g.features {
                for j in 0..c {
                    let d = row[j] - mean[j];
                    var[j] += d * d;
                }
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        ChannelStats { mean, std }
    }

    /// Drop queries whose labels are all zero. Applied to train and
    /// validation splits by default; test keeps everything.
    pub fn discard_no_relevant(mut self) -> Self {
        self.groups.retain(QueryGroup::has_relevant);
        self
    }
}

/// Standardize each channel to `(x - mean) / std` using stats from the
/// training split. Channels with vanishing spread map to zero.
pub fn normalize(ds: &Dataset, stats: &ChannelStats) -> Result<Dataset> {
    if stats.mean.len() != ds.feature_count || stats.std.len() != ds.feature_count {
        return Err(Error::Schema(format!(
            "stats width {} does not match feature_count {}",
            stats.mean.len(),
            ds.feature_count
        )));
    }
    let groups = ds
        .groups
        .iter()
        .map(|g| QueryGroup {
            qid: g.qid.clone(),
            labels: g.labels.clone(),
            features: g
                .features
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            if stats.std[j] < 1e-12 {
                                0.0
                            } else {
                                (v - stats.mean[j]) / stats.std[j]
                            }
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();
    Ok(Dataset {
        groups,
        feature_count: ds.feature_count,
        stats: Some(stats.clone()),
    })
}

/// Keep a uniformly random subset of `max_docs` documents (original order
/// preserved) when the query exceeds the cap. Evaluation paths never cap.
pub fn cap_documents(group: &QueryGroup, max_docs: usize, seed: u64) -> QueryGroup {
    let l = group.doc_count();
    if l <= max_docs {
        return group.clone();
    }
    let mut rng = rng_from_seed(seed);
    let mut indices: Vec<usize> = (0..l).collect();
    indices.shuffle(&mut rng);
    let mut keep: Vec<usize> = indices.into_iter().take(max_docs).collect();
    keep.sort_unstable();
    QueryGroup {
        qid: group.qid.clone(),
        features: keep.iter().map(|&i| group.features[i].clone()).collect(),
        labels: keep.iter().map(|&i| group.labels[i]).collect(),
    }
}
