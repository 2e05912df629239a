//! Differentiable ranking losses over one query's scores and labels:
//! pairwise logistic, its lambda-weighted listwise extension, and softmax
//! cross-entropy. All are shift-invariant in the scores and ignore
//! masked-out documents entirely.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::metrics::rank_order;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    PairwiseLogistic,
    PairwiseLogisticLambda,
    SoftmaxCe,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "pairwise_logistic" => LossKind::PairwiseLogistic,
            "pairwise_logistic_lambda" => LossKind::PairwiseLogisticLambda,
            "softmax_ce" => LossKind::SoftmaxCe,
            other => return Err(Error::Config(format!("unknown loss {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::PairwiseLogistic => "pairwise_logistic",
            LossKind::PairwiseLogisticLambda => "pairwise_logistic_lambda",
            LossKind::SoftmaxCe => "softmax_ce",
        }
    }
}

/// Gain applied to graded labels: NDCG-style 2^label - 1 for graded data,
/// identity for binary click data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainKind {
    Identity,
    Pow2Minus1,
}

impl GainKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => GainKind::Identity,
            "pow2minus1" => GainKind::Pow2Minus1,
            other => return Err(Error::Config(format!("unknown gain {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            GainKind::Identity => "identity",
            GainKind::Pow2Minus1 => "pow2minus1",
        }
    }

    pub fn apply(&self, label: u32) -> f64 {
        match self {
            GainKind::Identity => label as f64,
            GainKind::Pow2Minus1 => (label as f64).exp2() - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub gain: GainKind,
    /// Divide lambda weights by the query's maxDCG.
    pub lambda_normalize: bool,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            kind: LossKind::SoftmaxCe,
            gain: GainKind::Pow2Minus1,
            lambda_normalize: true,
        }
    }
}

/// Loss of one query, or a skip marker (softmax with no positive gain).
pub enum QueryLoss {
    Node(NodeId),
    Skipped,
}

pub fn query_loss(
    g: &mut Graph,
    spec: &LossSpec,
    scores: NodeId,
    labels: &[u32],
    mask: &[bool],
) -> Result<QueryLoss> {
    Ok(match spec.kind {
        LossKind::PairwiseLogistic => QueryLoss::Node(pairwise_logistic(g, scores, labels, mask)?),
        LossKind::PairwiseLogisticLambda => QueryLoss::Node(pairwise_logistic_lambda(
            g,
            scores,
            labels,
            mask,
            spec.gain,
            spec.lambda_normalize,
        )?),
        LossKind::SoftmaxCe => match softmax_ce(g, scores, labels, mask, spec.gain)? {
            Some(node) => QueryLoss::Node(node),
            None => QueryLoss::Skipped,
        },
    })
}

fn check_query(g: &Graph, scores: NodeId, labels: &[u32], mask: &[bool]) -> Result<usize> {
    let t = g.value(scores);
    let l = t.rows();
    if t.cols() != 1 || labels.len() != l || mask.len() != l {
        return Err(Error::DimensionMismatch {
            op: "query_loss",
            lhs: t.shape().to_vec(),
            rhs: vec![labels.len(), mask.len()],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidQuery("loss over an empty mask".into()));
    }
    Ok(l)
}

/// Sum over masked-in pairs with label_i > label_j of
/// log(1 + exp(-(s_i - s_j))), evaluated through the stabilized softplus.
/// Zero when no pair qualifies.
pub fn pairwise_logistic(
    g: &mut Graph,
    scores: NodeId,
    labels: &[u32],
    mask: &[bool],
) -> Result<NodeId> {
    let l = check_query(g, scores, labels, mask)?;
    let mut weights = vec![0.0; l * l];
    let mut any = false;
    for i in 0..l {
        for j in 0..l {
            if mask[i] && mask[j] && labels[i] > labels[j] {
                weights[i * l + j] = 1.0;
                any = true;
            }
        }
    }
    if !any {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    weighted_pair_sum(g, scores, weights, l)
}

/// Pairwise logistic with each pair weighted by the NDCG swap delta
/// |G_i - G_j| * |1/log2(1+rank_i) - 1/log2(1+rank_j)|, ranks taken from the
/// current score ordering and treated as constants.
pub fn pairwise_logistic_lambda(
    g: &mut Graph,
    scores: NodeId,
    labels: &[u32],
    mask: &[bool],
    gain: GainKind,
    normalize: bool,
) -> Result<NodeId> {
    let l = check_query(g, scores, labels, mask)?;
    let score_vals = g.value(scores).data().to_vec();

    // ranks over masked-in documents only, 1-based, score-descending
    let in_docs: Vec<usize> = (0..l).filter(|&i| mask[i]).collect();
    let in_scores: Vec<f64> = in_docs.iter().map(|&i| score_vals[i]).collect();
    let order = rank_order(&in_scores);
    let mut rank = vec![0usize; l];
    for (pos, &local) in order.iter().enumerate() {
        rank[in_docs[local]] = pos + 1;
    }

    let gains: Vec<f64> = labels.iter().map(|&lb| gain.apply(lb)).collect();
    let max_dcg: f64 = {
        let mut sorted: Vec<f64> = in_docs.iter().map(|&i| gains[i]).collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sorted
            .iter()
            .enumerate()
            .map(|(p, g)| g / (p as f64 + 2.0).log2())
            .sum()
    };
    if max_dcg == 0.0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }

    let disc = |r: usize| 1.0 / (1.0 + r as f64).log2();
    let mut weights = vec![0.0; l * l];
    let mut any = false;
    for i in 0..l {
        for j in 0..l {
            if mask[i] && mask[j] && labels[i] > labels[j] {
                let mut w = (gains[i] - gains[j]).abs() * (disc(rank[i]) - disc(rank[j])).abs();
                if normalize {
                    w /= max_dcg;
                }
                weights[i * l + j] = w;
                any = true;
            }
        }
    }
    if !any {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    weighted_pair_sum(g, scores, weights, l)
}

/// sum_ij W[i][j] * softplus(-(s_i - s_j)) via the margin matrix
/// D = s 1^T - 1 s^T.
fn weighted_pair_sum(
    g: &mut Graph,
    scores: NodeId,
    weights: Vec<f64>,
    l: usize,
) -> Result<NodeId> {
    let ones_row = g.constant(Tensor::full(1, l, 1.0));
    let ones_col = g.constant(Tensor::full(l, 1, 1.0));
    let left = g.matmul(scores, ones_row)?; // [i][j] = s_i
    let st = g.transpose(scores);
    let right = g.matmul(ones_col, st)?; // [i][j] = s_j
    let neg_right = g.neg(right);
    let margins = g.add(left, neg_right)?;
    let neg_margins = g.neg(margins);
    let terms = g.softplus(neg_margins);
    let w = g.constant(Tensor::new(vec![l, l], weights)?);
    let weighted = g.mul(terms, w)?;
    Ok(g.sum_all(weighted))
}

/// Listwise softmax cross-entropy: -sum_i (g_i / sum g) log softmax(s)_i over
/// masked-in documents, with max-subtraction stabilization and masked-out
/// documents excluded from the partition function. Returns `None` when every
/// gain is zero (the query is skipped).
pub fn softmax_ce(
    g: &mut Graph,
    scores: NodeId,
    labels: &[u32],
    mask: &[bool],
    gain: GainKind,
) -> Result<Option<NodeId>> {
    let l = check_query(g, scores, labels, mask)?;
    let gains: Vec<f64> = (0..l)
        .map(|i| if mask[i] { gain.apply(labels[i]) } else { 0.0 })
        .collect();
    let total: f64 = gains.iter().sum();
    if total == 0.0 {
        return Ok(None);
    }
    let score_vals = g.value(scores).data();
    let max = (0..l)
        .filter(|&i| mask[i])
        .map(|i| score_vals[i])
        .fold(f64::NEG_INFINITY, f64::max);

    let mask_col = g.constant(Tensor::new(
        vec![l, 1],
        mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )?);
    let shifted = g.add_const(scores, -max);
    // zero masked-out entries before exp so stray large scores cannot
    // overflow; they are excluded from the partition function either way
    let shifted = g.mul(shifted, mask_col)?;
    let exps = g.exp(shifted);
    let masked_exps = g.mul(exps, mask_col)?;
    let z = g.sum_all(masked_exps);
    let log_z = g.log(z);
    let neg_log_z = g.neg(log_z);
    let log_probs = g.add(shifted, neg_log_z)?; // broadcast 1x1 over Lx1
    let w = g.constant(Tensor::new(
        vec![l, 1],
        gains.iter().map(|&gv| gv / total).collect(),
    )?);
    let weighted = g.mul(log_probs, w)?;
    let sum = g.sum_all(weighted);
    Ok(Some(g.neg(sum)))
}

/// Mean per-query loss over a batch; skipped queries count separately and
/// contribute nothing.
pub struct BatchLoss {
    pub node: NodeId,
    pub contributing: usize,
    pub skipped: usize,
}

pub fn batch_loss(
    g: &mut Graph,
    spec: &LossSpec,
    queries: &[(NodeId, &[u32], &[bool])],
) -> Result<BatchLoss> {
    let mut acc: Option<NodeId> = None;
    let mut contributing = 0;
    let mut skipped = 0;
    for (scores, labels, mask) in queries {
        match query_loss(g, spec, *scores, labels, mask)? {
            QueryLoss::Node(node) => {
                contributing += 1;
                acc = Some(match acc {
                    None => node,
                    Some(a) => g.add(a, node)?,
                });
            }
            QueryLoss::Skipped => skipped += 1,
        }
    }
    let node = match acc {
        Some(a) => g.scale(a, 1.0 / contributing as f64),
        None => g.constant(Tensor::scalar(0.0)),
    };
    Ok(BatchLoss {
        node,
        contributing,
        skipped,
    })
}
