use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Operation that produced a node. Parent references are tape indices and
/// always point backwards, so the graph is acyclic by construction.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Log { x: NodeId },
    Exp { x: NodeId },
    Neg { x: NodeId },
    Softplus { x: NodeId },
    Rsqrt { x: NodeId },
    Scale { x: NodeId, c: f64 },
    AddConst { x: NodeId },
    ReduceMean { x: NodeId, mask: Vec<bool>, valid: usize },
    ReduceMax { x: NodeId, argmax: Vec<usize> },
    ReduceSum { x: NodeId, mask: Vec<bool> },
    SumAll { x: NodeId },
    Transpose { x: NodeId },
    ConcatRows { parts: Vec<NodeId> },
    SliceRows { x: NodeId, start: usize },
    ConcatCols { a: NodeId, b: NodeId },
    GatherRows { x: NodeId, indices: Vec<usize> },
}

struct Node {
    tensor: Tensor,
    op: Op,
    grad: Option<Vec<f64>>,
    /// True when this node lies on a path from a grad-requiring leaf, so
    /// backward can skip constant subgraphs entirely.
    needs_grad: bool,
}

/// Eager reverse-mode tape. Forward values are computed as nodes are pushed;
/// `backward` replays the tape in reverse. Single-threaded per instance;
/// independent graphs are independent.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Sigmoid with the usual two-branch stabilization; never overflows.
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(v)) via the softplus identity relu(v) + log1p(exp(-|v|)).
fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor, op: Op, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            tensor,
            op,
            grad: None,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Register an input leaf. Gradients are accumulated for it iff the
    /// tensor was marked with `with_grad`.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    /// Register a constant: a leaf that never receives gradient.
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Gradient of the last `backward` target with respect to `id`.
    /// `None` when no gradient reached the node (constant path or no call).
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        if ta.cols() != tb.rows() {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, needs))
    }

    fn binary_shapes(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let (ta, tb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        let compatible = ta.cols() == tb.cols()
            && (ta.rows() == tb.rows() || ta.rows() == 1 || tb.rows() == 1);
        if !compatible {
            return Err(Error::DimensionMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        Ok((ta.rows().max(tb.rows()), ta.cols()))
    }

    /// Elementwise addition; a `1 x C` operand broadcasts along the document
    /// axis against `L x C`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.binary_shapes("add", a, b)?;
        let (ta, tb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        let (ra, rb) = (ta.rows(), tb.rows());
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] =
                    ta.data()[(i % ra) * cols + j] + tb.data()[(i % rb) * cols + j];
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![rows, cols], out)?, Op::Add { a, b }, needs))
    }

    /// Elementwise product with the same broadcasting rule as `add`.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.binary_shapes("mul", a, b)?;
        let (ta, tb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        let (ra, rb) = (ta.rows(), tb.rows());
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] =
                    ta.data()[(i % ra) * cols + j] * tb.data()[(i % rb) * cols + j];
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![rows, cols], out)?, Op::Mul { a, b }, needs))
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let t = &self.nodes[x.0].tensor;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let tensor = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        let needs = self.needs(x);
        self.push(tensor, op, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Relu { x }, |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Sigmoid { x }, sigmoid)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Log { x }, f64::ln)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Exp { x }, f64::exp)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Neg { x }, |v| -v)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Softplus { x }, softplus)
    }

    /// x^(-1/2). Domain: strictly positive inputs.
    pub fn rsqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Rsqrt { x }, |v| 1.0 / v.sqrt())
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, Op::Scale { x, c }, |v| v * c)
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, Op::AddConst { x }, |v| v + c)
    }

    fn check_mask(&self, x: NodeId, mask: &[bool]) -> Result<usize> {
        let t = &self.nodes[x.0].tensor;
        if mask.len() != t.rows() {
            return Err(Error::DimensionMismatch {
                op: "reduce_mask",
                lhs: t.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let valid = mask.iter().filter(|&&m| m).count();
        if valid == 0 {
            return Err(Error::InvalidQuery("empty mask in reduction".into()));
        }
        Ok(valid)
    }

    /// Per-channel mean over masked-in rows: `L x C -> 1 x C`.
    pub fn reduce_mean(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let valid = self.check_mask(x, mask)?;
        let t = &self.nodes[x.0].tensor;
        let cols = t.cols();
        let mut out = vec![0.0; cols];
        for (i, &m) in mask.iter().enumerate() {
            if m {
                for j in 0..cols {
                    out[j] += t.at(i, j);
                }
            }
        }
        for v in &mut out {
            *v /= valid as f64;
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![1, cols], out)?,
            Op::ReduceMean {
                x,
                mask: mask.to_vec(),
                valid,
            },
            needs,
        ))
    }

    /// Per-channel max over masked-in rows. Backward routes the gradient to
    /// the lowest-index argmax row of each channel.
    pub fn reduce_max(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        self.check_mask(x, mask)?;
        let t = &self.nodes[x.0].tensor;
        let cols = t.cols();
        let mut out = vec![f64::NEG_INFINITY; cols];
        let mut argmax = vec![usize::MAX; cols];
        for (i, &m) in mask.iter().enumerate() {
            if m {
                for j in 0..cols {
                    let v = t.at(i, j);
                    if v > out[j] {
                        out[j] = v;
                        argmax[j] = i;
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![1, cols], out)?,
            Op::ReduceMax { x, argmax },
            needs,
        ))
    }

    /// Per-channel sum over masked-in rows: `L x C -> 1 x C`.
    pub fn reduce_sum(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        self.check_mask(x, mask)?;
        let t = &self.nodes[x.0].tensor;
        let cols = t.cols();
        let mut out = vec![0.0; cols];
        for (i, &m) in mask.iter().enumerate() {
            if m {
                for j in 0..cols {
                    out[j] += t.at(i, j);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![1, cols], out)?,
            Op::ReduceSum {
                x,
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    /// Sum of every entry: `R x C -> 1 x 1`.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let t = &self.nodes[x.0].tensor;
        let total: f64 = t.data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::SumAll { x }, needs)
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let t = &self.nodes[x.0].tensor;
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.at(i, j);
            }
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![c, r], out).expect("transposed shape"),
            Op::Transpose { x },
            needs,
        )
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidQuery("concat_rows of nothing".into()))?;
        let cols = self.nodes[first.0].tensor.cols();
        let mut rows = 0;
        for p in parts {
            let t = &self.nodes[p.0].tensor;
            if t.cols() != cols {
                return Err(Error::DimensionMismatch {
                    op: "concat_rows",
                    lhs: vec![cols],
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.rows();
        }
        let mut out = Vec::with_capacity(rows * cols);
        for p in parts {
            out.extend_from_slice(self.nodes[p.0].tensor.data());
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Contiguous row range `[start, start + len)`.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = &self.nodes[x.0].tensor;
        if start + len > t.rows() || len == 0 {
            return Err(Error::DimensionMismatch {
                op: "slice_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let cols = t.cols();
        let out = t.data()[start * cols..(start + len) * cols].to_vec();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![len, cols], out)?,
            Op::SliceRows { x, start },
            needs,
        ))
    }

    /// Side-by-side concatenation of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        if ta.rows() != tb.rows() {
            return Err(Error::DimensionMismatch {
                op: "concat_cols",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (rows, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for i in 0..rows {
            out.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![rows, ca + cb], out)?,
            Op::ConcatCols { a, b },
            needs,
        ))
    }

    /// Pick rows by index (repeats allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = &self.nodes[x.0].tensor;
        let cols = t.cols();
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::DimensionMismatch {
                op: "gather_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![indices.len(), cols], out)?,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            needs,
        ))
    }

    fn add_into(&mut self, id: NodeId, contribution: &[f64]) {
        let node = &mut self.nodes[id.0];
        let grad = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.tensor.numel()]);
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Reverse pass from a scalar output. Accumulated gradients are reachable
    /// via `grad` afterwards; a second call restarts from zeroed gradients.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        if !self.nodes[output.0].tensor.is_scalar() {
            return Err(Error::DimensionMismatch {
                op: "backward",
                lhs: self.nodes[output.0].tensor.shape().to_vec(),
                rhs: vec![1, 1],
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[output.0].grad = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let g = self.nodes[idx].grad.clone().expect("checked above");
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = {
                        let t = &self.nodes[a.0].tensor;
                        (t.rows(), t.cols())
                    };
                    let n = self.nodes[b.0].tensor.cols();
                    if self.needs(a) {
                        let bd = self.nodes[b.0].tensor.data().to_vec();
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * bd[p * n + j];
                                }
                                da[i * k + p] = acc;
                            }
                        }
                        self.add_into(a, &da);
                    }
                    if self.needs(b) {
                        let ad = self.nodes[a.0].tensor.data().to_vec();
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            for p in 0..k {
                                let aip = ad[i * k + p];
                                for j in 0..n {
                                    db[p * n + j] += aip * g[i * n + j];
                                }
                            }
                        }
                        self.add_into(b, &db);
                    }
                }
                Op::Add { a, b } => {
                    let cols = self.nodes[idx].tensor.cols();
                    let rows = self.nodes[idx].tensor.rows();
                    for side in [a, b] {
                        if self.needs(side) {
                            let srows = self.nodes[side.0].tensor.rows();
                            let contribution = reduce_broadcast(&g, rows, cols, srows);
                            self.add_into(side, &contribution);
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let cols = self.nodes[idx].tensor.cols();
                    let rows = self.nodes[idx].tensor.rows();
                    for (side, other) in [(a, b), (b, a)] {
                        if self.needs(side) {
                            let od = self.nodes[other.0].tensor.data().to_vec();
                            let orows = self.nodes[other.0].tensor.rows();
                            let mut scaled = vec![0.0; rows * cols];
                            for i in 0..rows {
                                for j in 0..cols {
                                    scaled[i * cols + j] =
                                        g[i * cols + j] * od[(i % orows) * cols + j];
                                }
                            }
                            let srows = self.nodes[side.0].tensor.rows();
                            let contribution = reduce_broadcast(&scaled, rows, cols, srows);
                            self.add_into(side, &contribution);
                        }
                    }
                }
                Op::Relu { x } => {
                    if self.needs(x) {
                        let xd = self.nodes[x.0].tensor.data();
                        // relu'(0) = 0 by convention
                        let c: Vec<f64> = xd
                            .iter()
                            .zip(&g)
                            .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                            .collect();
                        self.add_into(x, &c);
                    }
                }
                Op::Sigmoid { x } => {
                    if self.needs(x) {
                        let yd = self.nodes[idx].tensor.data();
                        let c: Vec<f64> = yd
                            .iter()
                            .zip(&g)
                            .map(|(&y, &gi)| gi * y * (1.0 - y))
                            .collect();
                        self.add_into(x, &c);
                    }
                }
                Op::Log { x } => {
                    if self.needs(x) {
                        let xd = self.nodes[x.0].tensor.data();
                        let c: Vec<f64> = xd.iter().zip(&g).map(|(&v, &gi)| gi / v).collect();
                        self.add_into(x, &c);
                    }
                }
                Op::Exp { x } => {
                    if self.needs(x) {
                        let yd = self.nodes[idx].tensor.data();
                        let c: Vec<f64> = yd.iter().zip(&g).map(|(&y, &gi)| gi * y).collect();
                        self.add_into(x, &c);
                    }
                }
                Op::Neg { x } => {
                    if self.needs(x) {
                        let c: Vec<f64> = g.iter().map(|&gi| -gi).collect();
                        self.add_into(x, &c);
                    }
                }
                Op::Softplus { x } => {
                    if self.needs(x) {
                        let xd = self.nodes[x.0].tensor.data();
                        let c: Vec<f64> = xd
                            .iter()
                            .zip(&g)
                            .map(|(&v, &gi)| gi * sigmoid(v))
                            .collect();
                        self.add_into(x, &c);
                    }
                }
                Op::Rsqrt { x } => {
                    if self.needs(x) {
                        let yd = self.nodes[idx].tensor.data();
                        let c: Vec<f64> = yd
                            .iter()
                            .zip(&g)
                            .map(|(&y, &gi)| gi * -0.5 * y * y * y)
                            .collect();
                        self.add_into(x, &c);
                    }
                }
                Op::Scale { x, c } => {
                    if self.needs(x) {
                        let contribution: Vec<f64> = g.iter().map(|&gi| gi * c).collect();
                        self.add_into(x, &contribution);
                    }
                }
                Op::AddConst { x } => {
                    if self.needs(x) {
                        self.add_into(x, &g);
                    }
                }
                Op::ReduceMean { x, mask, valid } => {
                    if self.needs(x) {
                        let cols = self.nodes[idx].tensor.cols();
                        let rows = self.nodes[x.0].tensor.rows();
                        let mut c = vec![0.0; rows * cols];
                        for (i, &m) in mask.iter().enumerate() {
                            if m {
                                for j in 0..cols {
                                    c[i * cols + j] = g[j] / valid as f64;
                                }
                            }
                        }
                        self.add_into(x, &c);
                    }
                }
                Op::ReduceMax { x, argmax } => {
                    if self.needs(x) {
                        let cols = self.nodes[idx].tensor.cols();
                        let rows = self.nodes[x.0].tensor.rows();
                        let mut c = vec![0.0; rows * cols];
                        for (j, &row) in argmax.iter().enumerate() {
                            c[row * cols + j] = g[j];
                        }
                        self.add_into(x, &c);
                    }
                }
                Op::ReduceSum { x, mask } => {
                    if self.needs(x) {
                        let cols = self.nodes[idx].tensor.cols();
                        let rows = self.nodes[x.0].tensor.rows();
                        let mut c = vec![0.0; rows * cols];
                        for (i, &m) in mask.iter().enumerate() {
                            if m {
                                for j in 0..cols {
                                    c[i * cols + j] = g[j];
                                }
                            }
                        }
                        self.add_into(x, &c);
                    }
                }
                Op::SumAll { x } => {
                    if self.needs(x) {
                        let n = self.nodes[x.0].tensor.numel();
                        self.add_into(x, &vec![g[0]; n]);
                    }
                }
                Op::Transpose { x } => {
                    if self.needs(x) {
                        let (r, c) = {
                            let t = &self.nodes[x.0].tensor;
                            (t.rows(), t.cols())
                        };
                        let mut contribution = vec![0.0; r * c];
                        for i in 0..r {
                            for j in 0..c {
                                contribution[i * c + j] = g[j * r + i];
                            }
                        }
                        self.add_into(x, &contribution);
                    }
                }
                Op::ConcatRows { parts } => {
                    let cols = self.nodes[idx].tensor.cols();
                    let mut offset = 0;
                    for p in parts {
                        let prows = self.nodes[p.0].tensor.rows();
                        if self.needs(p) {
                            let c = g[offset * cols..(offset + prows) * cols].to_vec();
                            self.add_into(p, &c);
                        }
                        offset += prows;
                    }
                }
                Op::SliceRows { x, start } => {
                    if self.needs(x) {
                        let cols = self.nodes[idx].tensor.cols();
                        let len = self.nodes[idx].tensor.rows();
                        let rows = self.nodes[x.0].tensor.rows();
                        let mut c = vec![0.0; rows * cols];
                        c[start * cols..(start + len) * cols].copy_from_slice(&g);
                        self.add_into(x, &c);
                    }
                }
                Op::ConcatCols { a, b } => {
                    let rows = self.nodes[idx].tensor.rows();
                    let ca = self.nodes[a.0].tensor.cols();
                    let cb = self.nodes[b.0].tensor.cols();
                    if self.needs(a) {
                        let mut c = vec![0.0; rows * ca];
                        for i in 0..rows {
                            c[i * ca..(i + 1) * ca]
                                .copy_from_slice(&g[i * (ca + cb)..i * (ca + cb) + ca]);
                        }
                        self.add_into(a, &c);
                    }
                    if self.needs(b) {
                        let mut c = vec![0.0; rows * cb];
                        for i in 0..rows {
                            c[i * cb..(i + 1) * cb]
                                .copy_from_slice(&g[i * (ca + cb) + ca..(i + 1) * (ca + cb)]);
                        }
                        self.add_into(b, &c);
                    }
                }
                Op::GatherRows { x, indices } => {
                    if self.needs(x) {
                        let cols = self.nodes[idx].tensor.cols();
                        let rows = self.nodes[x.0].tensor.rows();
                        let mut c = vec![0.0; rows * cols];
                        for (r, &i) in indices.iter().enumerate() {
                            for j in 0..cols {
                                c[i * cols + j] += g[r * cols + j];
                            }
                        }
                        self.add_into(x, &c);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Sum a full-size gradient down to the shape of a possibly row-broadcast
/// operand (`srows` is 1 for the broadcast side).
fn reduce_broadcast(g: &[f64], rows: usize, cols: usize, srows: usize) -> Vec<f64> {
    if srows == rows {
        return g.to_vec();
    }
    debug_assert_eq!(srows, 1);
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j] += g[i * cols + j];
        }
    }
    out
}
