//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Ops append nodes in topological order during the forward pass; `backward`
//! walks the tape in reverse and accumulates vector-Jacobian products.
//! Every op validates input shapes up front and rejects non-finite outputs,
//! so NaN/Inf surfaces as an error naming the op instead of propagating.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvDims};
use super::tensor::{dims2, dims4, Tensor};
use super::GraphError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    AddBias { x: NodeId, b: NodeId },
    Reshape { x: NodeId },
    Conv2d { x: NodeId, w: NodeId, dims: ConvDims },
    Relu { x: NodeId },
    GroupNorm { x: NodeId, scale: NodeId, shift: NodeId, groups: usize, stats: Vec<(f64, f64)> },
    GlobalAvgPool { x: NodeId },
    Dropout { x: NodeId, mask: Vec<f64> },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    Exp { x: NodeId },
    LogSoftmax { x: NodeId },
    CrossEntropy { logits: NodeId, labels: Vec<usize>, weights: Option<Vec<f64>> },
    Mean { x: NodeId },
    Sum { x: NodeId },
    Concat { parts: Vec<NodeId> },
    SqFrobNorm { x: NodeId },
    Transpose { x: NodeId },
    ColMean { x: NodeId },
    SubRowVec { x: NodeId, v: NodeId },
    PairwiseSqDist { x: NodeId, y: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// (elements per bias slot, bias width) for row- or channel-broadcast bias.
fn bias_layout(x: &Tensor, b: &Tensor) -> Result<(usize, usize), GraphError> {
    let want = match *x.shape() {
        [_, d] => d,
        [_, c, _, _] => c,
        ref s => {
            return Err(GraphError::Shape { op: "add_bias", msg: format!("unsupported input shape {s:?}") })
        }
    };
    if b.shape() != [want] {
        return Err(GraphError::Shape {
            op: "add_bias",
            msg: format!("bias shape {:?} does not match width {want}", b.shape()),
        });
    }
    let chunk = match *x.shape() {
        [_, _] => 1,
        [_, _, h, w] => h * w,
        _ => unreachable!(),
    };
    Ok((chunk, want))
}

/// Gradients of one backward pass, indexed by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `id`; nodes that do not influence the loss get zeros.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        match self.grads[id.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

/// Computation graph confined to one training step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op: Op::Leaf, value, requires_grad: trainable });
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, name: &'static str) -> Result<NodeId, GraphError> {
        if !value.all_finite() {
            return Err(GraphError::NonFinite { op: name });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, requires_grad });
        Ok(id)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(GraphError::Shape {
                op: "matmul",
                msg: format!("inner dims differ: ({m},{k}) x ({k2},{n})"),
            });
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        self.push(Op::MatMul { a, b }, value, self.needs(&[a, b]), "matmul")
    }

    /// Broadcast bias add: (n, d) + (d,) per row, or (n, c, h, w) + (c,) per channel.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (chunk, width) = bias_layout(self.value(x), self.value(b))?;
        let mut data = self.value(x).data().to_vec();
        let bias = self.value(b).data();
        for block in data.chunks_mut(chunk * width) {
            for (c, plane) in block.chunks_mut(chunk).enumerate() {
                for v in plane {
                    *v += bias[c];
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let value = Tensor::new(shape, data)?;
        self.push(Op::AddBias { x, b }, value, self.needs(&[x, b]), "add_bias")
    }

    /// Reinterprets a node under a new shape with the same element count.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, GraphError> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push(Op::Reshape { x }, value, self.needs(&[x]), "reshape")
    }

    /// 2-d convolution with "same" padding; weight is (c_out, c_in, k, k).
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize) -> Result<NodeId, GraphError> {
        let (batch, c_in, h, wid) = dims4(self.value(x), "conv2d")?;
        let (c_out, wc_in, kh, kw) = dims4(self.value(w), "conv2d")?;
        if wc_in != c_in || kh != kw {
            return Err(GraphError::Shape {
                op: "conv2d",
                msg: format!("weight {:?} incompatible with input channels {c_in}", self.value(w).shape()),
            });
        }
        if stride == 0 || stride > 2 {
            return Err(GraphError::Contract(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        let dims = ConvDims::new(batch, c_in, h, wid, c_out, kh, stride);
        let data = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), &dims);
        let value = Tensor::new(vec![batch, c_out, dims.h_out, dims.w_out], data)?;
        self.push(Op::Conv2d { x, w, dims }, value, self.needs(&[x, w]), "conv2d")
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(Op::Relu { x }, value, self.needs(&[x]), "relu")
    }

    /// Group normalization over (C/groups, H, W) blocks with per-channel affine.
    pub fn group_norm(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        groups: usize,
        eps: f64,
    ) -> Result<NodeId, GraphError> {
        let (batch, c, h, w) = dims4(self.value(x), "group_norm")?;
        if groups == 0 || c % groups != 0 {
            return Err(GraphError::Shape {
                op: "group_norm",
                msg: format!("{c} channels not divisible into {groups} groups"),
            });
        }
        if self.value(scale).shape() != [c] || self.value(shift).shape() != [c] {
            return Err(GraphError::Shape {
                op: "group_norm",
                msg: format!("affine params must have shape [{c}]"),
            });
        }
        let cg = c / groups;
        let m = cg * h * w;
        let mut data = self.value(x).data().to_vec();
        let sc = self.value(scale).data();
        let sh = self.value(shift).data();
        let mut stats = Vec::with_capacity(batch * groups);
        for b in 0..batch {
            for g in 0..groups {
                let start = (b * c + g * cg) * h * w;
                let block = &mut data[start..start + m];
                let mean = block.iter().sum::<f64>() / m as f64;
                let var = block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
                let istd = 1.0 / (var + eps).sqrt();
                stats.push((mean, istd));
                for (i, v) in block.iter_mut().enumerate() {
                    let ch = g * cg + i / (h * w);
                    *v = sc[ch] * ((*v - mean) * istd) + sh[ch];
                }
            }
        }
        let value = Tensor::new(vec![batch, c, h, w], data)?;
        let requires = self.needs(&[x, scale, shift]);
        self.push(Op::GroupNorm { x, scale, shift, groups, stats }, value, requires, "group_norm")
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let (batch, c, h, w) = dims4(self.value(x), "global_avg_pool")?;
        let hw = (h * w) as f64;
        let src = self.value(x).data();
        let mut data = vec![0.0; batch * c];
        for (i, out) in data.iter_mut().enumerate() {
            let plane = &src[i * h * w..(i + 1) * h * w];
            *out = plane.iter().sum::<f64>() / hw;
        }
        let value = Tensor::new(vec![batch, c], data)?;
        self.push(Op::GlobalAvgPool { x }, value, self.needs(&[x]), "global_avg_pool")
    }

    /// Train-mode dropout with inverted scaling; `p == 0` is an exact no-op.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut ChaCha8Rng) -> Result<NodeId, GraphError> {
        if !(0.0..1.0).contains(&p) {
            return Err(GraphError::Contract(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut value = self.value(x).clone();
        for (v, m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.push(Op::Dropout { x, mask }, value, self.needs(&[x]), "dropout")
    }

    fn elementwise2(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, GraphError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(GraphError::Shape {
                op: name,
                msg: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let mut value = self.value(a).clone();
        for (v, &bv) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *v = f(*v, bv);
        }
        self.push(op, value, self.needs(&[a, b]), name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.elementwise2(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.elementwise2(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.elementwise2(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, GraphError> {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v *= factor;
        }
        self.push(Op::Scale { x, factor }, value, self.needs(&[x]), "scale")
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = v.exp();
        }
        self.push(Op::Exp { x }, value, self.needs(&[x]), "exp")
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let (n, k) = dims2(self.value(x), "log_softmax")?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(k) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::new(vec![n, k], data)?;
        self.push(Op::LogSoftmax { x }, value, self.needs(&[x]), "log_softmax")
    }

    /// Mean negative log-likelihood over the batch.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, GraphError> {
        self.cross_entropy_impl(logits, labels, None)
    }

    /// Cross-entropy with per-example weights: `(1/n) * sum_i w_i * nll_i`.
    pub fn cross_entropy_weighted(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        weights: &[f64],
    ) -> Result<NodeId, GraphError> {
        if weights.len() != labels.len() {
            return Err(GraphError::Shape {
                op: "cross_entropy",
                msg: format!("{} weights for {} labels", weights.len(), labels.len()),
            });
        }
        self.cross_entropy_impl(logits, labels, Some(weights.to_vec()))
    }

    fn cross_entropy_impl(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        weights: Option<Vec<f64>>,
    ) -> Result<NodeId, GraphError> {
        let (n, k) = dims2(self.value(logits), "cross_entropy")?;
        if labels.len() != n {
            return Err(GraphError::Shape {
                op: "cross_entropy",
                msg: format!("{} labels for {n} rows", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(GraphError::Contract(format!("label {bad} out of range for {k} classes")));
        }
        let data = self.value(logits).data();
        let mut total = 0.0;
        for (i, row) in data.chunks(k).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let nll = lse - row[labels[i]];
            total += weights.as_ref().map_or(nll, |w| w[i] * nll);
        }
        let value = Tensor::scalar(total / n as f64);
        let requires = self.needs(&[logits]);
        self.push(Op::CrossEntropy { logits, labels: labels.to_vec(), weights }, value, requires, "cross_entropy")
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let numel = self.value(x).numel();
        if numel == 0 {
            return Err(GraphError::Contract("mean of empty tensor".into()));
        }
        let value = Tensor::scalar(self.value(x).data().iter().sum::<f64>() / numel as f64);
        self.push(Op::Mean { x }, value, self.needs(&[x]), "mean")
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let value = Tensor::scalar(self.value(x).data().iter().sum::<f64>());
        self.push(Op::Sum { x }, value, self.needs(&[x]), "sum")
    }

    /// Concatenation along the first axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        if parts.is_empty() {
            return Err(GraphError::Contract("concat of zero tensors".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if first.is_empty() {
            return Err(GraphError::Shape { op: "concat", msg: "cannot concat scalars".into() });
        }
        let mut rows = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[1..] != first[1..] {
                return Err(GraphError::Shape {
                    op: "concat",
                    msg: format!("trailing dims differ: {:?} vs {:?}", s, first),
                });
            }
            rows += s[0];
        }
        let mut shape = first.clone();
        shape[0] = rows;
        let mut data = Vec::with_capacity(shape.iter().product());
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(shape, data)?;
        let requires = self.needs(parts);
        self.push(Op::Concat { parts: parts.to_vec() }, value, requires, "concat")
    }

    /// Sum of squared entries.
    pub fn sq_frob_norm(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let value = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum::<f64>());
        self.push(Op::SqFrobNorm { x }, value, self.needs(&[x]), "sq_frob_norm")
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let (r, c) = dims2(self.value(x), "transpose")?;
        let src = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], data)?;
        self.push(Op::Transpose { x }, value, self.needs(&[x]), "transpose")
    }

    /// Column means of a 2-d tensor: (n, d) -> (d,).
    pub fn col_mean(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let (n, d) = dims2(self.value(x), "col_mean")?;
        if n == 0 {
            return Err(GraphError::Contract("col_mean of empty batch".into()));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; d];
        for row in src.chunks(d) {
            for (acc, &v) in data.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for acc in &mut data {
            *acc /= n as f64;
        }
        let value = Tensor::new(vec![d], data)?;
        self.push(Op::ColMean { x }, value, self.needs(&[x]), "col_mean")
    }

    /// Subtracts a row vector from every row: (n, d) - (d,).
    pub fn sub_row_vec(&mut self, x: NodeId, v: NodeId) -> Result<NodeId, GraphError> {
        let (n, d) = dims2(self.value(x), "sub_row_vec")?;
        if self.value(v).shape() != [d] {
            return Err(GraphError::Shape {
                op: "sub_row_vec",
                msg: format!("vector shape {:?} vs width {d}", self.value(v).shape()),
            });
        }
        let mut data = self.value(x).data().to_vec();
        let vec = self.value(v).data();
        for row in data.chunks_mut(d) {
            for (a, &b) in row.iter_mut().zip(vec) {
                *a -= b;
            }
        }
        let value = Tensor::new(vec![n, d], data)?;
        self.push(Op::SubRowVec { x, v }, value, self.needs(&[x, v]), "sub_row_vec")
    }

    /// Squared Euclidean distances between all row pairs: (n,d),(m,d) -> (n,m).
    pub fn pairwise_sq_dist(&mut self, x: NodeId, y: NodeId) -> Result<NodeId, GraphError> {
        let (n, d) = dims2(self.value(x), "pairwise_sq_dist")?;
        let (m, d2) = dims2(self.value(y), "pairwise_sq_dist")?;
        if d != d2 {
            return Err(GraphError::Shape {
                op: "pairwise_sq_dist",
                msg: format!("feature widths differ: {d} vs {d2}"),
            });
        }
        let xs = self.value(x).data();
        let ys = self.value(y).data();
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            let xi = &xs[i * d..(i + 1) * d];
            let out = &mut data[i * m..(i + 1) * m];
            for (j, o) in out.iter_mut().enumerate() {
                let yj = &ys[j * d..(j + 1) * d];
                let mut acc = 0.0;
                for (&a, &b) in xi.iter().zip(yj) {
                    let diff = a - b;
                    acc += diff * diff;
                }
                *o = acc;
            }
        }
        let value = Tensor::new(vec![n, m], data)?;
        self.push(Op::PairwiseSqDist { x, y }, value, self.needs(&[x, y]), "pairwise_sq_dist")
    }

    /// Gradients of a scalar `loss` with respect to every node that needs them.
    /// Trainable leaves that do not influence the loss get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GraphError> {
        if !self.value(loss).is_scalar() {
            return Err(GraphError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g); // keep leaf gradients
                    continue;
                }
                op => self.backprop_op(op, &g, &mut grads)?,
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => {
                for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_op(&self, op: &Op, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), GraphError> {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = dims2(self.value(*a), "matmul")?;
                let n = self.value(*b).shape()[1];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_a_bt_acc(g.data(), self.value(*b).data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_at_b_acc(self.value(*a).data(), g.data(), &mut db, m, k, n);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::AddBias { x, b } => {
                let (chunk, width) = bias_layout(self.value(*x), self.value(*b))?;
                if self.requires_grad(*x) {
                    self.accumulate(grads, *x, g.clone());
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; width];
                    for block in g.data().chunks(chunk * width) {
                        for (c, plane) in block.chunks(chunk).enumerate() {
                            db[c] += plane.iter().sum::<f64>();
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![width], db)?);
                }
            }
            Op::Reshape { x } => {
                let shape = self.value(*x).shape().to_vec();
                let dx = g.clone().reshaped(shape)?;
                self.accumulate(grads, *x, dx);
            }
            Op::Conv2d { x, w, dims } => {
                let (gx, gw) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    dims,
                );
                if self.requires_grad(*x) {
                    let shape = self.value(*x).shape().to_vec();
                    self.accumulate(grads, *x, Tensor::new(shape, gx)?);
                }
                if self.requires_grad(*w) {
                    let shape = self.value(*w).shape().to_vec();
                    self.accumulate(grads, *w, Tensor::new(shape, gw)?);
                }
            }
            Op::Relu { x } => {
                let mut dx = g.clone();
                for (dv, &xv) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    if xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::GroupNorm { x, scale, shift, groups, stats } => {
                let (batch, c, h, w) = dims4(self.value(*x), "group_norm")?;
                let cg = c / groups;
                let m = cg * h * w;
                let xs = self.value(*x).data();
                let sc = self.value(*scale).data();
                let gd = g.data();
                let mut dx = vec![0.0; xs.len()];
                let mut dscale = vec![0.0; c];
                let mut dshift = vec![0.0; c];
                for b in 0..batch {
                    for grp in 0..*groups {
                        let (mean, istd) = stats[b * groups + grp];
                        let start = (b * c + grp * cg) * h * w;
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        for i in 0..m {
                            let ch = grp * cg + i / (h * w);
                            let xhat = (xs[start + i] - mean) * istd;
                            let dy = gd[start + i] * sc[ch];
                            sum_dy += dy;
                            sum_dy_xhat += dy * xhat;
                            dscale[ch] += gd[start + i] * xhat;
                            dshift[ch] += gd[start + i];
                        }
                        let inv_m = 1.0 / m as f64;
                        for i in 0..m {
                            let ch = grp * cg + i / (h * w);
                            let xhat = (xs[start + i] - mean) * istd;
                            let dy = gd[start + i] * sc[ch];
                            dx[start + i] = istd * (dy - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
                        }
                    }
                }
                if self.requires_grad(*x) {
                    self.accumulate(grads, *x, Tensor::new(vec![batch, c, h, w], dx)?);
                }
                if self.requires_grad(*scale) {
                    self.accumulate(grads, *scale, Tensor::new(vec![c], dscale)?);
                }
                if self.requires_grad(*shift) {
                    self.accumulate(grads, *shift, Tensor::new(vec![c], dshift)?);
                }
            }
            Op::GlobalAvgPool { x } => {
                let (batch, c, h, w) = dims4(self.value(*x), "global_avg_pool")?;
                let inv = 1.0 / (h * w) as f64;
                let mut dx = vec![0.0; batch * c * h * w];
                for (i, &gv) in g.data().iter().enumerate() {
                    let v = gv * inv;
                    for o in dx[i * h * w..(i + 1) * h * w].iter_mut() {
                        *o = v;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![batch, c, h, w], dx)?);
            }
            Op::Dropout { x, mask } => {
                let mut dx = g.clone();
                for (dv, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *dv *= m;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.clone());
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.clone());
                }
                if self.requires_grad(*b) {
                    let mut db = g.clone();
                    for v in db.data_mut() {
                        *v = -*v;
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Mul { a, b } => {
                if self.requires_grad(*a) {
                    let mut da = g.clone();
                    for (v, &bv) in da.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *v *= bv;
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = g.clone();
                    for (v, &av) in db.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *v *= av;
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale { x, factor } => {
                let mut dx = g.clone();
                for v in dx.data_mut() {
                    *v *= factor;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Exp { x } => {
                // out = exp(x) is the value of this node; recompute from x.
                let mut dx = g.clone();
                for (v, &xv) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *v *= xv.exp();
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmax { x } => {
                let (n, k) = dims2(self.value(*x), "log_softmax")?;
                let xs = self.value(*x).data();
                let mut dx = vec![0.0; n * k];
                for i in 0..n {
                    let row = &xs[i * k..(i + 1) * k];
                    let grow = &g.data()[i * k..(i + 1) * k];
                    let gsum: f64 = grow.iter().sum();
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    for j in 0..k {
                        let p = (row[j] - max).exp() / denom;
                        dx[i * k + j] = grow[j] - p * gsum;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![n, k], dx)?);
            }
            Op::CrossEntropy { logits, labels, weights } => {
                let (n, k) = dims2(self.value(*logits), "cross_entropy")?;
                let xs = self.value(*logits).data();
                let gs = g.scalar_value()?;
                let mut dx = vec![0.0; n * k];
                for i in 0..n {
                    let row = &xs[i * k..(i + 1) * k];
                    let wi = weights.as_ref().map_or(1.0, |w| w[i]);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    let coef = gs * wi / n as f64;
                    for j in 0..k {
                        let p = (row[j] - max).exp() / denom;
                        let target = if labels[i] == j { 1.0 } else { 0.0 };
                        dx[i * k + j] = coef * (p - target);
                    }
                }
                self.accumulate(grads, *logits, Tensor::new(vec![n, k], dx)?);
            }
            Op::Mean { x } => {
                let numel = self.value(*x).numel();
                let v = g.scalar_value()? / numel as f64;
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, v));
            }
            Op::Sum { x } => {
                let v = g.scalar_value()?;
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, v));
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.requires_grad(p) {
                        let shape = self.value(p).shape().to_vec();
                        let slice = g.data()[offset..offset + len].to_vec();
                        self.accumulate(grads, p, Tensor::new(shape, slice)?);
                    }
                    offset += len;
                }
            }
            Op::SqFrobNorm { x } => {
                let gs = g.scalar_value()?;
                let mut dx = self.value(*x).clone();
                for v in dx.data_mut() {
                    *v *= 2.0 * gs;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Transpose { x } => {
                let (r, c) = dims2(self.value(*x), "transpose")?;
                // g has shape (c, r)
                let mut dx = vec![0.0; r * c];
                let gd = g.data();
                for i in 0..c {
                    for j in 0..r {
                        dx[j * c + i] = gd[i * r + j];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![r, c], dx)?);
            }
            Op::ColMean { x } => {
                let (n, d) = dims2(self.value(*x), "col_mean")?;
                let inv = 1.0 / n as f64;
                let mut dx = vec![0.0; n * d];
                for row in dx.chunks_mut(d) {
                    for (o, &gv) in row.iter_mut().zip(g.data()) {
                        *o = gv * inv;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![n, d], dx)?);
            }
            Op::SubRowVec { x, v } => {
                let d = self.value(*v).numel();
                if self.requires_grad(*x) {
                    self.accumulate(grads, *x, g.clone());
                }
                if self.requires_grad(*v) {
                    let mut dv = vec![0.0; d];
                    for row in g.data().chunks(d) {
                        for (acc, &gv) in dv.iter_mut().zip(row) {
                            *acc -= gv;
                        }
                    }
                    self.accumulate(grads, *v, Tensor::new(vec![d], dv)?);
                }
            }
            Op::PairwiseSqDist { x, y } => {
                let (n, d) = dims2(self.value(*x), "pairwise_sq_dist")?;
                let m = self.value(*y).shape()[0];
                let xs = self.value(*x).data();
                let ys = self.value(*y).data();
                let gd = g.data();
                let mut dx = vec![0.0; n * d];
                let mut dy = vec![0.0; m * d];
                for i in 0..n {
                    let xi = &xs[i * d..(i + 1) * d];
                    for j in 0..m {
                        let gv = gd[i * m + j];
                        if gv == 0.0 {
                            continue;
                        }
                        let yj = &ys[j * d..(j + 1) * d];
                        for t in 0..d {
                            let diff = 2.0 * gv * (xi[t] - yj[t]);
                            dx[i * d + t] += diff;
                            dy[j * d + t] -= diff;
                        }
                    }
                }
                if self.requires_grad(*x) {
                    self.accumulate(grads, *x, Tensor::new(vec![n, d], dx)?);
                }
                if self.requires_grad(*y) {
                    self.accumulate(grads, *y, Tensor::new(vec![m, d], dy)?);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_on_spec_example() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn conv_same_padding_stride2_halves_28() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 28, 28]));
        let w = tape.constant(Tensor::zeros(&[4, 1, 3, 3]));
        let y = tape.conv2d(x, w, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 4, 14, 14]);
    }

    #[test]
    fn group_norm_constant_group_is_zero_pre_affine() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 8, 2, 2], 3.5));
        let scale = tape.constant(Tensor::full(&[8], 1.0));
        let shift = tape.constant(Tensor::zeros(&[8]));
        let y = tape.group_norm(x, scale, shift, 8, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        for k in [2usize, 5, 10] {
            let mut tape = Tape::new();
            let logits = tape.constant(Tensor::full(&[3, k], 0.7));
            let loss = tape.cross_entropy(logits, &[0, 1, k - 1]).unwrap();
            let got = tape.value(loss).scalar_value().unwrap();
            assert!((got - (k as f64).ln()).abs() < 1e-12, "k={k}: {got}");
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(vec![3.0, -1.0, 0.5]), true);
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(vec![1.0, -2.0]), true);
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).data(), &[2.0, -4.0]);
    }

    #[test]
    fn unreached_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        let q = tape.leaf(Tensor::from_vec(vec![5.0]), true);
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(q).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        assert!(matches!(tape.backward(p), Err(GraphError::Contract(_))));
    }

    #[test]
    fn non_finite_forward_is_reported_with_op_name() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1e308]));
        let err = tape.exp(x).unwrap_err();
        assert!(matches!(err, GraphError::NonFinite { op: "exp" }));
    }

    #[test]
    fn dropout_zero_probability_is_identity_node() {
        use rand::SeedableRng;
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let y = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn matmul_shape_mismatch_is_descriptive() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("3") && msg.contains("4"), "{msg}");
    }
}
