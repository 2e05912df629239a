//! Padded batching of query groups for training.

use super::Dataset;
use crate::rng::rng_from_seed;
use rand::seq::SliceRandom;

/// A padded batch: `B x Lmax x C` features, `B x Lmax` labels and mask.
/// `mask[i][j]` is true exactly for `j < L_i`; padded cells carry feature 0
/// and label 0 and are never semantically load-bearing — every consumer
/// threads the mask.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
    pub mask: Vec<bool>,
    pub batch_size: usize,
    pub max_docs: usize,
    pub feature_count: usize,
    /// Index of each query in the source dataset, in batch order.
    pub group_indices: Vec<usize>,
}

impl Batch {
    pub fn query_features(&self, i: usize) -> &[f64] {
        let stride = self.max_docs * self.feature_count;
        &self.features[i * stride..(i + 1) * stride]
    }

    pub fn query_labels(&self, i: usize) -> &[u32] {
        &self.labels[i * self.max_docs..(i + 1) * self.max_docs]
    }

    pub fn query_mask(&self, i: usize) -> &[bool] {
        &self.mask[i * self.max_docs..(i + 1) * self.max_docs]
    }
}

/// One epoch of batches: query order shuffled by the seed, queries padded to
/// the longest group in each batch.
pub fn batch_iter(ds: &Dataset, batch_size: usize, seed: u64) -> BatchIter<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..ds.groups.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    BatchIter {
        ds,
        order,
        batch_size,
        cursor: 0,
    }
}

pub struct BatchIter<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let chosen = &self.order[self.cursor..end];
        self.cursor = end;

        let c = self.ds.feature_count;
        let b = chosen.len();
        let lmax = chosen
            .iter()
            .map(|&i| self.ds.groups[i].doc_count())
            .max()
            .unwrap_or(0);
        let mut batch = Batch {
            features: vec![0.0; b * lmax * c],
            labels: vec![0; b * lmax],
            mask: vec![false; b * lmax],
            batch_size: b,
            max_docs: lmax,
            feature_count: c,
            group_indices: chosen.to_vec(),
        };
        for (bi, &gi) in chosen.iter().enumerate() {
            let g = &self.ds.groups[gi];
            for (d, row) in g.features.iter().enumerate() {
                let off = (bi * lmax + d) * c;
                batch.features[off..off + c].copy_from_slice(row);
                batch.labels[bi * lmax + d] = g.labels[d];
                batch.mask[bi * lmax + d] = true;
            }
        }
        Some(batch)
    }
}
