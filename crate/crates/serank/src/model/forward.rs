//! Graph construction for every model variant. A batch forward builds one
//! graph over all queries so cross-query batch-norm statistics stay exact;
//! each query otherwise flows through its own subgraph sharing the bound
//! parameter leaves.

use super::{plan, BlockKind, BlockPlan, Bound, Pooling, ScoringModel, Variant};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::QueryGroup;
use crate::error::{Error, Result};
use crate::rng::{derive_seed_indexed, rng_from_seed};
use rand::seq::SliceRandom;

const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Batch statistics for batch norm, seeded document shuffles for GSF.
    Train { step_seed: u64 },
    /// Moving statistics, input document order, no RNG anywhere.
    Infer,
}

/// Batch-norm statistics observed during a training forward, used by the
/// trainer to update the moving averages.
pub struct BnBatchStats {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct ForwardOutput {
    /// Per query: an `L x 1` score column (padded rows carry garbage; apply
    /// the mask or `extract_scores` before ranking).
    pub scores: Vec<NodeId>,
    pub bn_stats: Vec<BnBatchStats>,
}

/// Per-channel pooling over masked-in documents: `L x C -> 1 x C`.
pub fn squeeze(g: &mut Graph, x: NodeId, mask: &[bool], pooling: Pooling) -> Result<NodeId> {
    match pooling {
        Pooling::Mean => g.reduce_mean(x, mask),
        Pooling::Max => g.reduce_max(x, mask),
    }
}

/// Bottleneck gate: outer(relu(U w1) w2). The outer activation is sigmoid so
/// the gate lands in (0,1); the double-relu fidelity flag swaps it for relu.
pub fn excite(
    g: &mut Graph,
    u: NodeId,
    w1: NodeId,
    w2: NodeId,
    sigmoid_gate: bool,
) -> Result<NodeId> {
    let h = g.matmul(u, w1)?;
    let h = g.relu(h);
    let e = g.matmul(h, w2)?;
    Ok(if sigmoid_gate { g.sigmoid(e) } else { g.relu(e) })
}

/// Squeeze-and-excitation: rescale every document row by the shared gate.
pub fn se_block(
    g: &mut Graph,
    x: NodeId,
    mask: &[bool],
    w1: NodeId,
    w2: NodeId,
    pooling: Pooling,
    sigmoid_gate: bool,
) -> Result<NodeId> {
    let u = squeeze(g, x, mask, pooling)?;
    let s = excite(g, u, w1, w2, sigmoid_gate)?;
    g.mul(x, s)
}

/// SE-b: reduce each document first (relu(x w1)), pool the reduced rows,
/// then expand back to per-channel gates.
pub fn se_b_block(
    g: &mut Graph,
    x: NodeId,
    mask: &[bool],
    w1: NodeId,
    w2: NodeId,
    pooling: Pooling,
    sigmoid_gate: bool,
) -> Result<NodeId> {
    let s = se_b_gate(g, x, mask, w1, w2, pooling, sigmoid_gate)?;
    g.mul(x, s)
}

fn se_b_gate(
    g: &mut Graph,
    x: NodeId,
    mask: &[bool],
    w1: NodeId,
    w2: NodeId,
    pooling: Pooling,
    sigmoid_gate: bool,
) -> Result<NodeId> {
    let reduced = g.matmul(x, w1)?;
    let reduced = g.relu(reduced);
    let pooled = squeeze(g, reduced, mask, pooling)?;
    let e = g.matmul(pooled, w2)?;
    Ok(if sigmoid_gate { g.sigmoid(e) } else { g.relu(e) })
}

/// Scores with the padded-document sentinel applied: masked-out rows get
/// negative infinity so they sort last and contribute nothing to metrics.
pub fn extract_scores(g: &Graph, scores: NodeId, mask: &[bool]) -> Vec<f64> {
    let data = g.value(scores).data();
    mask.iter()
        .enumerate()
        .map(|(i, &m)| if m { data[i] } else { f64::NEG_INFINITY })
        .collect()
}

pub fn group_tensor(group: &QueryGroup) -> Tensor {
    Tensor::from_rows(&group.features).expect("query groups have rectangular features")
}

/// Row matrix flowing through the shared layer stack, with its row mask and
/// whatever is needed to map rows back to documents at the end.
struct QueryState {
    node: NodeId,
    rows_mask: Vec<bool>,
    gsf: Option<GsfAux>,
}

struct GsfAux {
    /// Original document index for each compact (masked-in, permuted) row.
    perm: Vec<usize>,
    total_docs: usize,
}

impl ScoringModel {
    /// Build the forward graph for a list of queries. `inputs` pairs each
    /// query's `L x C` feature node with its document mask.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        bound: &Bound,
        inputs: &[(NodeId, &[bool])],
        mode: &Mode,
    ) -> Result<ForwardOutput> {
        let plan = plan(&self.spec)?;
        let sigmoid_gate = !self.spec.double_relu_excitation;
        let mut bn_stats = Vec::new();

        let mut states = Vec::with_capacity(inputs.len());
        for (qi, (x, mask)) in inputs.iter().enumerate() {
            if g.value(*x).cols() != self.spec.input_width {
                return Err(Error::DimensionMismatch {
                    op: "forward",
                    lhs: g.value(*x).shape().to_vec(),
                    rhs: vec![self.spec.input_width],
                });
            }
            if mask.len() != g.value(*x).rows() || !mask.iter().any(|&m| m) {
                return Err(Error::InvalidQuery(format!(
                    "query {qi}: mask must cover rows with at least one document"
                )));
            }
            states.push(match self.spec.variant {
                Variant::Gsf => self.gsf_entry(g, *x, mask, mode, qi)?,
                _ => {
                    let mut node = *x;
                    if let Some(b) = &plan.input_block {
                        node = self.apply_block(g, bound, b, node, mask, sigmoid_gate)?;
                    }
                    QueryState {
                        node,
                        rows_mask: mask.to_vec(),
                        gsf: None,
                    }
                }
            });
        }

        for layer in &plan.layers {
            let i = layer.index;
            let w = self.bound_id(bound, &format!("fc{i}.weight"));
            let b = self.bound_id(bound, &format!("fc{i}.bias"));
            for state in &mut states {
                let h = g.matmul(state.node, w)?;
                state.node = g.add(h, b)?;
            }
            if layer.batch_norm {
                self.apply_batch_norm(g, bound, i, &mut states, mode, &mut bn_stats)?;
            }
            for state in &mut states {
                state.node = g.relu(state.node);
            }
            if let Some(block) = &layer.block {
                for state in &mut states {
                    let mask = state.rows_mask.clone();
                    state.node =
                        self.apply_block(g, bound, block, state.node, &mask, sigmoid_gate)?;
                }
            }
        }

        let ow = self.bound_id(bound, "out.weight");
        let ob = self.bound_id(bound, "out.bias");
        let mut scores = Vec::with_capacity(states.len());
        for state in states {
            let h = g.matmul(state.node, ow)?;
            let out = g.add(h, ob)?;
            scores.push(match state.gsf {
                None => out,
                Some(aux) => gsf_aggregate(g, out, &aux)?,
            });
        }
        Ok(ForwardOutput { scores, bn_stats })
    }

    /// Build the `Lv x (m*C)` circular-group matrix for one query. Training
    /// shuffles the masked-in documents first; inference keeps input order.
    fn gsf_entry(
        &self,
        g: &mut Graph,
        x: NodeId,
        mask: &[bool],
        mode: &Mode,
        query_index: usize,
    ) -> Result<QueryState> {
        let mut order: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if let Mode::Train { step_seed } = mode {
            let seed = derive_seed_indexed(*step_seed, "gsf-perm", query_index as u64);
            order.shuffle(&mut rng_from_seed(seed));
        }
        let lv = order.len();
        let compact = g.gather_rows(x, &order)?;
        let m = self.spec.group_size;
        let mut grouped = None;
        for p in 0..m {
            let idx: Vec<usize> = (0..lv).map(|i| (i + p) % lv).collect();
            let part = g.gather_rows(compact, &idx)?;
            grouped = Some(match grouped {
                None => part,
                Some(acc) => g.concat_cols(acc, part)?,
            });
        }
        Ok(QueryState {
            node: grouped.expect("group_size >= 1"),
            rows_mask: vec![true; lv],
            gsf: Some(GsfAux {
                perm: order,
                total_docs: mask.len(),
            }),
        })
    }

    fn apply_block(
        &self,
        g: &mut Graph,
        bound: &Bound,
        block: &BlockPlan,
        x: NodeId,
        mask: &[bool],
        sigmoid_gate: bool,
    ) -> Result<NodeId> {
        let w1 = self.bound_id(bound, &format!("{}.w1", block.name));
        let w2 = self.bound_id(bound, &format!("{}.w2", block.name));
        let pooling = self.spec.pooling;
        match block.kind {
            BlockKind::Se => se_block(g, x, mask, w1, w2, pooling, sigmoid_gate),
            BlockKind::SeB => se_b_block(g, x, mask, w1, w2, pooling, sigmoid_gate),
            BlockKind::NoSqueeze => {
                // per-document gate: same bottleneck, no pooling anywhere
                let h = g.matmul(x, w1)?;
                let h = g.relu(h);
                let e = g.matmul(h, w2)?;
                let s = if sigmoid_gate { g.sigmoid(e) } else { g.relu(e) };
                g.mul(x, s)
            }
            BlockKind::NoExcitation => {
                let s = se_b_gate(g, x, mask, w1, w2, pooling, sigmoid_gate)?;
                let ones = g.constant(Tensor::full(g.value(x).rows(), 1, 1.0));
                let srows = g.matmul(ones, s)?;
                g.concat_cols(x, srows)
            }
        }
    }

    /// Batch norm over all masked-in rows of every query in the batch
    /// (training) or the stored moving statistics (inference).
    fn apply_batch_norm(
        &self,
        g: &mut Graph,
        bound: &Bound,
        layer: usize,
        states: &mut [QueryState],
        mode: &Mode,
        bn_stats: &mut Vec<BnBatchStats>,
    ) -> Result<()> {
        let gamma = self.bound_id(bound, &format!("bn{layer}.gamma"));
        let beta = self.bound_id(bound, &format!("bn{layer}.beta"));
        match mode {
            Mode::Train { .. } => {
                let parts: Vec<NodeId> = states.iter().map(|s| s.node).collect();
                let cat = g.concat_rows(&parts)?;
                let full_mask: Vec<bool> = states
                    .iter()
                    .flat_map(|s| s.rows_mask.iter().copied())
                    .collect();
                let mu = g.reduce_mean(cat, &full_mask)?;
                let neg_mu = g.neg(mu);
                let centered = g.add(cat, neg_mu)?;
                let sq = g.mul(centered, centered)?;
                let var = g.reduce_mean(sq, &full_mask)?;
                bn_stats.push(BnBatchStats {
                    layer,
                    mean: g.value(mu).data().to_vec(),
                    var: g.value(var).data().to_vec(),
                });
                let shifted = g.add_const(var, BN_EPS);
                let inv = g.rsqrt(shifted);
                let xhat = g.mul(centered, inv)?;
                let scaled = g.mul(xhat, gamma)?;
                let y = g.add(scaled, beta)?;
                let mut offset = 0;
                for state in states.iter_mut() {
                    let rows = state.rows_mask.len();
                    state.node = g.slice_rows(y, offset, rows)?;
                    offset += rows;
                }
            }
            Mode::Infer => {
                let mm = self.bound_id(bound, &format!("bn{layer}.moving_mean"));
                let mv = self.bound_id(bound, &format!("bn{layer}.moving_var"));
                let neg_mm = g.neg(mm);
                let shifted = g.add_const(mv, BN_EPS);
                let inv = g.rsqrt(shifted);
                for state in states.iter_mut() {
                    let centered = g.add(state.node, neg_mm)?;
                    let xhat = g.mul(centered, inv)?;
                    let scaled = g.mul(xhat, gamma)?;
                    state.node = g.add(scaled, beta)?;
                }
            }
        }
        Ok(())
    }

    /// Score one query. Masked-out documents receive negative infinity.
    pub fn score(&self, features: &Tensor, mask: &[bool], mode: &Mode) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let x = g.constant(features.clone());
        let out = self.forward_batch(&mut g, &bound, &[(x, mask)], mode)?;
        Ok(extract_scores(&g, out.scores[0], mask))
    }

    /// Inference scores for a whole query group (all documents in).
    pub fn score_group(&self, group: &QueryGroup) -> Result<Vec<f64>> {
        let mask = vec![true; group.doc_count()];
        self.score(&group_tensor(group), &mask, &Mode::Infer)
    }
}

/// Each document's score is the mean of its scores over the `m` circular
/// groups containing it, scattered back to original document positions
/// (masked-out rows get zero and are sentinel-replaced downstream).
fn gsf_aggregate(g: &mut Graph, group_scores: NodeId, aux: &GsfAux) -> Result<NodeId> {
    let lv = aux.perm.len();
    let m = g.value(group_scores).cols();
    let t = g.transpose(group_scores); // m x Lv
    let mut acc: Option<NodeId> = None;
    for p in 0..m {
        let row = g.slice_rows(t, p, 1)?;
        let col = g.transpose(row); // Lv x 1, entry i = score of group i, position p
        // document at compact position j sits at position p of group (j - p) mod Lv
        let idx: Vec<usize> = (0..lv).map(|j| (j + lv - (p % lv)) % lv).collect();
        let aligned = g.gather_rows(col, &idx)?;
        acc = Some(match acc {
            None => aligned,
            Some(a) => g.add(a, aligned)?,
        });
    }
    let mean = g.scale(acc.expect("m >= 1"), 1.0 / m as f64);
    // scatter compact rows back to the full document list; row `lv` is zero
    let zero = g.constant(Tensor::zeros(1, 1));
    let extended = g.concat_rows(&[mean, zero])?;
    let mut back = vec![lv; aux.total_docs];
    for (compact_pos, &doc) in aux.perm.iter().enumerate() {
        back[doc] = compact_pos;
    }
    g.gather_rows(extended, &back)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init, ModelSpec};
    use rand::Rng;

    fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    fn small_spec(variant: Variant) -> ModelSpec {
        let mut spec = ModelSpec::new(variant, 6);
        spec.hidden_widths = vec![5, 4];
        spec.seed = 17;
        spec
    }

    #[test]
    fn squeeze_of_identical_rows_is_that_row() {
        for pooling in [Pooling::Mean, Pooling::Max] {
            let mut g = Graph::new();
            let x = g.constant(
                Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![0.5, -1.0, 2.0]]).unwrap(),
            );
            let u = squeeze(&mut g, x, &[true, true], pooling).unwrap();
            assert_eq!(g.value(u).data(), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn squeeze_mean_arithmetic() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.0, 4.0], vec![2.0, 0.0]]).unwrap());
        let u = squeeze(&mut g, x, &[true, true], Pooling::Mean).unwrap();
        assert_eq!(g.value(u).data(), &[1.0, 2.0]);
    }

    #[test]
    fn squeeze_is_invariant_under_row_permutation() {
        let x = random_tensor(5, 3, 2);
        let perm = [3usize, 0, 4, 1, 2];
        let permuted =
            Tensor::from_rows(&perm.map(|i| x.data()[i * 3..(i + 1) * 3].to_vec())).unwrap();
        for pooling in [Pooling::Mean, Pooling::Max] {
            let mut g = Graph::new();
            let a = g.constant(x.clone());
            let b = g.constant(permuted.clone());
            let ua = squeeze(&mut g, a, &[true; 5], pooling).unwrap();
            let ub = squeeze(&mut g, b, &[true; 5], pooling).unwrap();
            for (x, y) in g.value(ua).data().iter().zip(g.value(ub).data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn excite_zero_weights_gates_at_half() {
        let mut g = Graph::new();
        let u = g.constant(random_tensor(1, 4, 3));
        let w1 = g.constant(Tensor::zeros(4, 2));
        let w2 = g.constant(Tensor::zeros(2, 4));
        let s = excite(&mut g, u, w1, w2, true).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn excite_hand_worked_two_channel_case() {
        // U = [1,1], W1 = [[1],[1]], W2 = [[2,-2]]: hidden relu(2) = 2,
        // s = [sigmoid(4), sigmoid(-4)]
        let mut g = Graph::new();
        let u = g.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let w1 = g.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
        let w2 = g.constant(Tensor::new(vec![1, 2], vec![2.0, -2.0]).unwrap());
        let s = excite(&mut g, u, w1, w2, true).unwrap();
        let got = g.value(s).data();
        assert!((got[0] - 0.9820137900379085).abs() < 1e-12);
        assert!((got[1] - 0.01798620996209156).abs() < 1e-12);
    }

    #[test]
    fn excite_output_stays_inside_unit_interval() {
        let mut rng = rng_from_seed(5);
        for trial in 0..50 {
            let mut g = Graph::new();
            let c = rng.random_range(2..8);
            let u = g.constant(random_tensor(1, c, 100 + trial));
            let w1 = g.constant(random_tensor(c, (c / 2).max(1), 200 + trial));
            let w2 = g.constant(random_tensor((c / 2).max(1), c, 300 + trial));
            let s = excite(&mut g, u, w1, w2, true).unwrap();
            assert!(g.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn se_block_zero_weights_halves_input() {
        let x = random_tensor(4, 3, 7);
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let w1 = g.constant(Tensor::zeros(3, 1));
        let w2 = g.constant(Tensor::zeros(1, 3));
        let out = se_block(&mut g, xn, &[true; 4], w1, w2, Pooling::Mean, true).unwrap();
        for (o, i) in g.value(out).data().iter().zip(x.data()) {
            assert_eq!(*o, i / 2.0);
        }
    }

    #[test]
    fn se_block_single_document_collapses_to_own_excitation() {
        let x = random_tensor(1, 4, 8);
        let w1t = random_tensor(4, 2, 9);
        let w2t = random_tensor(2, 4, 10);
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let w1 = g.constant(w1t.clone());
        let w2 = g.constant(w2t.clone());
        let blocked = se_block(&mut g, xn, &[true], w1, w2, Pooling::Mean, true).unwrap();
        let s = excite(&mut g, xn, w1, w2, true).unwrap();
        let manual: Vec<f64> = x
            .data()
            .iter()
            .zip(g.value(s).data())
            .map(|(a, b)| a * b)
            .collect();
        assert_eq!(g.value(blocked).data(), manual.as_slice());
    }

    #[test]
    fn se_block_is_row_equivariant() {
        let x = random_tensor(4, 3, 11);
        let perm = [2usize, 0, 3, 1];
        let permuted =
            Tensor::from_rows(&perm.map(|i| x.data()[i * 3..(i + 1) * 3].to_vec())).unwrap();
        let w1t = random_tensor(3, 1, 12);
        let w2t = random_tensor(1, 3, 13);
        let run = |input: &Tensor| {
            let mut g = Graph::new();
            let xn = g.constant(input.clone());
            let w1 = g.constant(w1t.clone());
            let w2 = g.constant(w2t.clone());
            let out = se_block(&mut g, xn, &[true; 4], w1, w2, Pooling::Mean, true).unwrap();
            g.value(out).data().to_vec()
        };
        let base = run(&x);
        let perm_out = run(&permuted);
        for (pos, &src) in perm.iter().enumerate() {
            for j in 0..3 {
                assert!((perm_out[pos * 3 + j] - base[src * 3 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn se_b_block_zero_weights_halves_input() {
        let x = random_tensor(3, 4, 14);
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let w1 = g.constant(Tensor::zeros(4, 2));
        let w2 = g.constant(Tensor::zeros(2, 4));
        let out = se_b_block(&mut g, xn, &[true; 3], w1, w2, Pooling::Mean, true).unwrap();
        for (o, i) in g.value(out).data().iter().zip(x.data()) {
            assert_eq!(*o, i / 2.0);
        }
    }

    #[test]
    fn se_b_block_hand_worked_trace() {
        // x1 = [1,0], x2 = [0,1], W1 = [[1],[-1]], W2 = [[2,-2]], mean pool:
        // reduced = relu([[1],[-1]]) = [[1],[0]]; pooled = [0.5];
        // e = [1,-1]; s = [sigmoid(1), sigmoid(-1)]
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let w1 = g.constant(Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap());
        let w2 = g.constant(Tensor::new(vec![1, 2], vec![2.0, -2.0]).unwrap());
        let out = se_b_block(&mut g, x, &[true, true], w1, w2, Pooling::Mean, true).unwrap();
        let s_hi = 0.7310585786300049; // sigmoid(1)
        let s_lo = 0.2689414213699951; // sigmoid(-1)
        let got = g.value(out).data();
        assert!((got[0] - s_hi).abs() < 1e-12);
        assert!(got[1].abs() < 1e-15);
        assert!(got[2].abs() < 1e-15);
        assert!((got[3] - s_lo).abs() < 1e-12);
    }

    #[test]
    fn se_b_identical_documents_match_single_document_case() {
        let row: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.5).collect();
        let w1t = random_tensor(4, 2, 15);
        let w2t = random_tensor(2, 4, 16);
        let run = |rows: usize| {
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_rows(&vec![row.clone(); rows]).unwrap());
            let w1 = g.constant(w1t.clone());
            let w2 = g.constant(w2t.clone());
            let out =
                se_b_block(&mut g, x, &vec![true; rows], w1, w2, Pooling::Mean, true).unwrap();
            g.value(out).data()[..4].to_vec()
        };
        let single = run(1);
        let triple = run(3);
        for (a, b) in single.iter().zip(&triple) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn serank_with_zero_se_weights_reduces_to_scaled_univariate() {
        // zero gates are exactly 1/2; with zero biases the relu MLP is
        // positively homogeneous, so scores equal univariate(x / 2^k)
        let mut spec = small_spec(Variant::Serank);
        spec.se_on_input = true;
        let mut serank = init(&spec).unwrap();
        for name in ["se_in", "se0", "se1"] {
            for w in ["w1", "w2"] {
                let p = serank.param_mut(&format!("{name}.{w}"));
                let shape = p.tensor.shape().to_vec();
                p.tensor = Tensor::zeros(shape[0], shape[1]);
            }
        }
        let mut uni = init(&small_spec(Variant::Univariate)).unwrap();
        for name in ["fc0.weight", "fc1.weight", "out.weight"] {
            uni.param_mut(name).tensor = serank.param(name).tensor.clone();
        }

        let x = random_tensor(4, 6, 18);
        let k = 3; // input block + one per hidden layer
        let scaled = Tensor::new(
            vec![4, 6],
            x.data().iter().map(|v| v / 2f64.powi(k)).collect(),
        )
        .unwrap();
        let mask = [true; 4];
        let a = serank.score(&x, &mask, &Mode::Infer).unwrap();
        let b = uni.score(&scaled, &mask, &Mode::Infer).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn identical_documents_get_identical_scores_in_every_variant() {
        let row: Vec<f64> = (0..6).map(|i| 0.2 * i as f64 - 0.4).collect();
        let x = Tensor::from_rows(&vec![row; 5]).unwrap();
        for variant in [
            Variant::Univariate,
            Variant::Gsf,
            Variant::Serank,
            Variant::SerankB,
            Variant::SerankNoSqueeze,
            Variant::SerankNoExcitation,
        ] {
            let model = init(&small_spec(variant)).unwrap();
            let scores = model.score(&x, &[true; 5], &Mode::Infer).unwrap();
            for s in &scores[1..] {
                assert!(
                    (s - scores[0]).abs() < 1e-12,
                    "{variant:?}: {scores:?}"
                );
            }
        }
    }

    #[test]
    fn gsf_with_group_size_one_equals_univariate() {
        let mut gsf_spec = small_spec(Variant::Gsf);
        gsf_spec.group_size = 1;
        let gsf = init(&gsf_spec).unwrap();
        let uni = init(&small_spec(Variant::Univariate)).unwrap();
        // identical parameter shapes in identical order: same seeded draws
        let x = random_tensor(5, 6, 19);
        let mask = [true; 5];
        let a = gsf.score(&x, &mask, &Mode::Infer).unwrap();
        let b = uni.score(&x, &mask, &Mode::Infer).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gsf_scores_respect_document_masks() {
        let mut spec = small_spec(Variant::Gsf);
        spec.group_size = 3;
        let model = init(&spec).unwrap();
        let x = random_tensor(6, 6, 20);
        let mask = [true, false, true, true, false, true];
        let scores = model.score(&x, &mask, &Mode::Infer).unwrap();
        assert_eq!(scores.len(), 6);
        assert_eq!(scores[1], f64::NEG_INFINITY);
        assert_eq!(scores[4], f64::NEG_INFINITY);
        assert!(scores.iter().enumerate().all(|(i, &s)| !mask[i] || s.is_finite()));

        // masked-in scores must not depend on masked-out feature rows
        let mut altered = x.clone();
        for j in 0..6 {
            altered.data_mut()[1 * 6 + j] = 9.9;
        }
        let scores2 = model.score(&altered, &mask, &Mode::Infer).unwrap();
        assert_eq!(scores, scores2);
    }

    #[test]
    fn gsf_infer_is_deterministic_and_train_uses_seeded_shuffle() {
        let mut spec = small_spec(Variant::Gsf);
        spec.group_size = 2;
        let model = init(&spec).unwrap();
        let x = random_tensor(5, 6, 21);
        let mask = [true; 5];
        let a = model.score(&x, &mask, &Mode::Infer).unwrap();
        let b = model.score(&x, &mask, &Mode::Infer).unwrap();
        assert_eq!(a, b);
        let t1 = model
            .score(&x, &mask, &Mode::Train { step_seed: 1 })
            .unwrap();
        let t1_again = model
            .score(&x, &mask, &Mode::Train { step_seed: 1 })
            .unwrap();
        assert_eq!(t1, t1_again);
        let t2 = model
            .score(&x, &mask, &Mode::Train { step_seed: 2 })
            .unwrap();
        assert_ne!(t1, t2);
    }

    #[test]
    fn univariate_and_no_squeeze_scores_are_document_independent() {
        for variant in [Variant::Univariate, Variant::SerankNoSqueeze] {
            let model = init(&small_spec(variant)).unwrap();
            let x = random_tensor(4, 6, 22);
            let mask = [true; 4];
            let base = model.score(&x, &mask, &Mode::Infer).unwrap();
            let mut altered = x.clone();
            for j in 0..6 {
                altered.data_mut()[2 * 6 + j] = -3.3; // rewrite document 2
            }
            let changed = model.score(&altered, &mask, &Mode::Infer).unwrap();
            for i in [0usize, 1, 3] {
                assert_eq!(base[i].to_bits(), changed[i].to_bits(), "{variant:?}");
            }
            assert_ne!(base[2], changed[2]);
        }
    }

    #[test]
    fn serank_exhibits_cross_document_dependence() {
        let model = init(&small_spec(Variant::Serank)).unwrap();
        let x = random_tensor(2, 6, 23);
        let mask = [true, true];
        let base = model.score(&x, &mask, &Mode::Infer).unwrap();
        let mut altered = x.clone();
        for j in 0..6 {
            altered.data_mut()[6 + j] += 1.5; // perturb document 2
        }
        let changed = model.score(&altered, &mask, &Mode::Infer).unwrap();
        assert!(
            (base[0] - changed[0]).abs() > 1e-6,
            "document 1 score should shift: {} vs {}",
            base[0],
            changed[0]
        );
    }

    #[test]
    fn serank_variants_are_permutation_equivariant_at_inference() {
        for variant in [Variant::Serank, Variant::SerankB] {
            let mut spec = small_spec(variant);
            spec.batch_norm = true; // moving stats at inference: still row-local
            let model = init(&spec).unwrap();
            let x = random_tensor(5, 6, 24);
            let perm = [4usize, 2, 0, 3, 1];
            let permuted =
                Tensor::from_rows(&perm.map(|i| x.data()[i * 6..(i + 1) * 6].to_vec()))
                    .unwrap();
            let mask = [true; 5];
            let base = model.score(&x, &mask, &Mode::Infer).unwrap();
            let perm_scores = model.score(&permuted, &mask, &Mode::Infer).unwrap();
            for (pos, &src) in perm.iter().enumerate() {
                assert!(
                    (perm_scores[pos] - base[src]).abs() < 1e-9,
                    "{variant:?} pos {pos}"
                );
            }
        }
    }

    #[test]
    fn batch_norm_training_uses_cross_query_statistics() {
        let mut spec = small_spec(Variant::Univariate);
        spec.batch_norm = true;
        let model = init(&spec).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let x1 = g.constant(random_tensor(3, 6, 25));
        let x2 = g.constant(random_tensor(2, 6, 26));
        let m1 = [true, true, false];
        let m2 = [true, true];
        let out = model
            .forward_batch(
                &mut g,
                &bound,
                &[(x1, &m1), (x2, &m2)],
                &Mode::Train { step_seed: 0 },
            )
            .unwrap();
        assert_eq!(out.bn_stats.len(), 2); // one record per hidden layer
        assert_eq!(out.bn_stats[0].mean.len(), 5);

        // single-query forward must see different statistics
        let mut g2 = Graph::new();
        let bound2 = model.bind(&mut g2);
        let x1b = g2.constant(random_tensor(3, 6, 25));
        let solo = model
            .forward_batch(&mut g2, &bound2, &[(x1b, &m1)], &Mode::Train { step_seed: 0 })
            .unwrap();
        assert_ne!(out.bn_stats[0].mean, solo.bn_stats[0].mean);
    }

    #[test]
    fn masked_documents_do_not_leak_into_pooling() {
        let model = init(&small_spec(Variant::SerankB)).unwrap();
        let x = random_tensor(4, 6, 27);
        let mask = [true, true, true, false];
        let base = model.score(&x, &mask, &Mode::Infer).unwrap();
        let mut altered = x.clone();
        for j in 0..6 {
            altered.data_mut()[3 * 6 + j] = 123.0;
        }
        let changed = model.score(&altered, &mask, &Mode::Infer).unwrap();
        assert_eq!(base, changed);
    }
}
