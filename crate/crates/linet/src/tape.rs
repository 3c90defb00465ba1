//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Forward ops append nodes to the tape; `backward` replays the recorded ops
//! in reverse, accumulating gradients additively. Gradients persist only on
//! `requires_grad` leaves; interior nodes use per-pass scratch buffers, so
//! calling `backward` twice doubles every leaf gradient exactly.

use crate::error::{Error, Result};
use crate::gate;
use crate::scalar::Scalar;
use crate::tensor::{axis_lanes, lane_start, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Scalar> {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    TransposeLast2 { x: NodeId },
    ConcatLast { parts: Vec<NodeId> },
    SliceLast { x: NodeId, start: usize },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddBias { x: NodeId, bias: NodeId },
    Scale { x: NodeId, c: T },
    Relu { x: NodeId },
    Abs { x: NodeId },
    Neg { x: NodeId },
    Reshape { x: NodeId },
    SoftmaxAxis { x: NodeId, axis: usize },
    GateSoftmax { x: NodeId, axis: usize, mask: Vec<bool> },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    EmbedLookup { table: NodeId, indices: Vec<usize> },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    CosineSim { u: NodeId, v: NodeId },
    Log1pSumExp { x: NodeId },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    /// Persistent gradient accumulator; allocated lazily, leaves only.
    grad: Option<Vec<T>>,
    requires_grad: bool,
    /// True when a `requires_grad` leaf is reachable from this node.
    needs_grad: bool,
    op: Op<T>,
}

/// Linear record of a forward computation with enough information to run
/// the backward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    live_bytes: usize,
    peak_bytes: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            live_bytes: 0,
            peak_bytes: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes currently held in node values and leaf gradients.
    pub fn live_bytes(&self) -> usize {
        self.live_bytes
    }

    /// High-water mark of [`Tape::live_bytes`] including backward scratch.
    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }

    fn track_alloc(&mut self, bytes: usize) {
        self.live_bytes += bytes;
        if self.live_bytes > self.peak_bytes {
            self.peak_bytes = self.live_bytes;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, requires_grad: bool) -> NodeId {
        self.track_alloc(value.byte_size());
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            needs_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Registers a leaf tensor. Gradients accumulate on it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad, requires_grad)
    }

    /// Registers a constant (no gradient flows into it).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Clones the node value out of the tape.
    pub fn tensor(&self, id: NodeId) -> Tensor<T> {
        self.nodes[id.0].value.clone()
    }

    /// Accumulated gradient of a `requires_grad` leaf, if any backward ran.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Gradient as a tensor; zeros when no gradient reached the leaf.
    pub fn grad_tensor(&self, id: NodeId) -> Tensor<T> {
        let node = &self.nodes[id.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape()).expect("grad shape"),
        }
    }

    /// Clears persistent leaf gradients.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = &mut node.grad {
                g.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Selection mask of a gate node (`topk_softmax` / `subset_softmax`).
    pub fn gate_mask(&self, id: NodeId) -> Option<&[bool]> {
        match &self.nodes[id.0].op {
            Op::GateSoftmax { mask, .. } => Some(mask),
            _ => None,
        }
    }

    // ── Forward operations ──────────────────────────────────────────────

    /// Batched matrix product `[B,m,k] x [B,k,n] -> [B,m,n]`.
    ///
    /// A rank-2 rhs is broadcast across the batch (its gradient sums over
    /// batches); two rank-2 operands multiply as plain matrices.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ash, bsh) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        let value = matmul_forward(self.value(a), self.value(b))
            .map_err(|e| Error::shape(format!("matmul {ash:?} x {bsh:?}: {e}")))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul { a, b }, needs, false))
    }

    /// Swaps the last two axes; rank-2 input is treated as batch size 1.
    pub fn transpose_last2(&mut self, x: NodeId) -> Result<NodeId> {
        let value = transpose_forward(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::TransposeLast2 { x }, needs, false))
    }

    /// Concatenates along the last axis; all leading extents must match.
    pub fn concat_last(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_last requires at least one part"));
        }
        let lead = self.value(parts[0]).shape()[..self.value(parts[0]).rank() - 1].to_vec();
        let mut last = 0usize;
        for &p in parts {
            let sh = self.value(p).shape();
            if sh[..sh.len() - 1] != lead[..] {
                return Err(Error::shape(format!(
                    "concat_last leading dims differ: {:?} vs {:?}",
                    self.value(parts[0]).shape(),
                    sh
                )));
            }
            last += sh[sh.len() - 1];
        }
        let mut shape = lead.clone();
        shape.push(last);
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * last);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let w = t.shape()[t.rank() - 1];
                data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(&shape, data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            value,
            Op::ConcatLast {
                parts: parts.to_vec(),
            },
            needs,
            false,
        ))
    }

    /// Contiguous slice `[start, start+len)` of the last axis.
    pub fn slice_last(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(x);
        let w = t.shape()[t.rank() - 1];
        if len == 0 || start + len > w {
            return Err(Error::shape(format!(
                "slice_last [{start}, {}) out of range for last extent {w}",
                start + len
            )));
        }
        let rows = t.numel() / w;
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * w + start..r * w + start + len]);
        }
        let value = Tensor::new(&shape, data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::SliceLast { x, start }, needs, false))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = zip_elementwise(self.value(a), self.value(b), |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs, false))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = zip_elementwise(self.value(a), self.value(b), |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub { a, b }, needs, false))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = zip_elementwise(self.value(a), self.value(b), |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs, false))
    }

    /// Adds a rank-1 bias along the trailing axis.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        let b = self.value(bias);
        let w = t.shape()[t.rank() - 1];
        if b.rank() != 1 || b.numel() != w {
            return Err(Error::shape(format!(
                "bias shape {:?} does not broadcast over trailing extent {w}",
                b.shape()
            )));
        }
        let mut data = t.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v = *v + b.data()[i % w];
        }
        let value = Tensor::new(t.shape(), data)?;
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddBias { x, bias }, needs, false))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let value = Tensor::new(self.value(x).shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Scale { x, c }, needs, false)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let value = Tensor::new(self.value(x).shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Relu { x }, needs, false)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v.abs()).collect();
        let value = Tensor::new(self.value(x).shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Abs { x }, needs, false)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| -v).collect();
        let value = Tensor::new(self.value(x).shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Neg { x }, needs, false)
    }

    /// Reinterprets the same row-major data under a new shape.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshaped(shape)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape { x }, needs, false))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(x);
        let (lanes, len, stride) = axis_lanes(t.shape(), axis)?;
        let full = vec![true; len];
        let mut out = vec![T::zero(); t.numel()];
        let mut scratch = vec![T::zero(); len];
        let mut probs = vec![T::zero(); len];
        for lane in 0..lanes {
            let base = lane_start(lane, len, stride);
            for i in 0..len {
                scratch[i] = t.data()[base + i * stride];
            }
            gate::lane_subset_softmax(&scratch, &full, &mut probs)?;
            for i in 0..len {
                out[base + i * stride] = probs[i];
            }
        }
        let value = Tensor::new(t.shape(), out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::SoftmaxAxis { x, axis }, needs, false))
    }

    /// Top-k softmax gate along `axis`: the k largest logits per lane are
    /// softmax-normalized, every other weight is exactly zero.
    pub fn topk_softmax(&mut self, x: NodeId, axis: usize, k: usize) -> Result<NodeId> {
        let t = self.value(x);
        let (lanes, len, stride) = axis_lanes(t.shape(), axis)?;
        if k == 0 || k > len {
            return Err(Error::config(format!(
                "top-k k={k} invalid for axis length {len}"
            )));
        }
        let mut mask = vec![false; t.numel()];
        let mut out = vec![T::zero(); t.numel()];
        let mut scratch = vec![T::zero(); len];
        let mut lane_mask = vec![false; len];
        let mut probs = vec![T::zero(); len];
        for lane in 0..lanes {
            let base = lane_start(lane, len, stride);
            for i in 0..len {
                scratch[i] = t.data()[base + i * stride];
            }
            gate::lane_topk_mask(&scratch, k, &mut lane_mask)?;
            gate::lane_subset_softmax(&scratch, &lane_mask, &mut probs)?;
            for i in 0..len {
                mask[base + i * stride] = lane_mask[i];
                out[base + i * stride] = probs[i];
            }
        }
        let value = Tensor::new(t.shape(), out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::GateSoftmax { x, axis, mask }, needs, false))
    }

    /// Softmax over a fixed selection mask (used to freeze gate selections).
    pub fn subset_softmax(&mut self, x: NodeId, axis: usize, mask: Vec<bool>) -> Result<NodeId> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(Error::shape(format!(
                "mask length {} does not match tensor numel {}",
                mask.len(),
                t.numel()
            )));
        }
        let (lanes, len, stride) = axis_lanes(t.shape(), axis)?;
        let mut out = vec![T::zero(); t.numel()];
        let mut scratch = vec![T::zero(); len];
        let mut lane_mask = vec![false; len];
        let mut probs = vec![T::zero(); len];
        for lane in 0..lanes {
            let base = lane_start(lane, len, stride);
            for i in 0..len {
                scratch[i] = t.data()[base + i * stride];
                lane_mask[i] = mask[base + i * stride];
            }
            gate::lane_subset_softmax(&scratch, &lane_mask, &mut probs)?;
            for i in 0..len {
                out[base + i * stride] = probs[i];
            }
        }
        let value = Tensor::new(t.shape(), out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::GateSoftmax { x, axis, mask }, needs, false))
    }

    /// Sum of all elements, as a rank-1 scalar.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, needs, false)
    }

    /// Mean of all elements, as a rank-1 scalar.
    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = T::from_f64(self.value(x).numel() as f64);
        let s: T = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s / n), Op::MeanAll { x }, needs, false)
    }

    /// Gathers rows of `table` (`[V, D]`): output shape is `leading + [D]`.
    ///
    /// Gradients scatter-add into the looked-up rows.
    pub fn embedding_lookup(
        &mut self,
        table: NodeId,
        indices: &[usize],
        leading: &[usize],
    ) -> Result<NodeId> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::shape(format!(
                "embedding table must be rank 2, got {:?}",
                t.shape()
            )));
        }
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        let rows: usize = leading.iter().product();
        if rows != indices.len() {
            return Err(Error::shape(format!(
                "leading shape {leading:?} implies {rows} lookups, got {} indices",
                indices.len()
            )));
        }
        let mut shape = leading.to_vec();
        shape.push(dim);
        let mut data = Vec::with_capacity(rows * dim);
        for &idx in indices {
            if idx >= vocab {
                return Err(Error::config(format!(
                    "lookup index {idx} out of range for vocab {vocab}"
                )));
            }
            data.extend_from_slice(&t.data()[idx * dim..(idx + 1) * dim]);
        }
        let value = Tensor::new(&shape, data)?;
        let needs = self.needs(table);
        Ok(self.push(
            value,
            Op::EmbedLookup {
                table,
                indices: indices.to_vec(),
            },
            needs,
            false,
        ))
    }

    /// Layer normalization over the last axis with learnable scale and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let t = self.value(x);
        let w = t.shape()[t.rank() - 1];
        let g = self.value(gamma);
        let b = self.value(beta);
        if g.rank() != 1 || g.numel() != w || b.rank() != 1 || b.numel() != w {
            return Err(Error::shape(format!(
                "layer_norm scale/shift must be rank-1 of length {w}"
            )));
        }
        let rows = t.numel() / w;
        let mut data = vec![T::zero(); t.numel()];
        for r in 0..rows {
            let row = &t.data()[r * w..(r + 1) * w];
            let (mean, inv_sigma) = layer_norm_stats(row, eps);
            for i in 0..w {
                let xn = (row[i] - mean) * inv_sigma;
                data[r * w + i] = g.data()[i] * xn + b.data()[i];
            }
        }
        let value = Tensor::new(t.shape(), data)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, eps }, needs, false))
    }

    /// Cosine similarity of two rank-1 vectors, as a rank-1 scalar.
    pub fn cosine(&mut self, u: NodeId, v: NodeId) -> Result<NodeId> {
        let (tu, tv) = (self.value(u), self.value(v));
        if tu.rank() != 1 || tv.rank() != 1 || tu.numel() != tv.numel() {
            return Err(Error::shape(format!(
                "cosine requires equal-length rank-1 vectors, got {:?} and {:?}",
                tu.shape(),
                tv.shape()
            )));
        }
        let (c, _, _) = cosine_parts(tu.data(), tv.data())?;
        let needs = self.needs(u) || self.needs(v);
        Ok(self.push(Tensor::scalar(c), Op::CosineSim { u, v }, needs, false))
    }

    /// `ln(1 + sum_i exp(x_i))` over a rank-1 vector, stabilized against the
    /// implicit zero term.
    pub fn log1p_sum_exp(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() != 1 {
            return Err(Error::shape(format!(
                "log1p_sum_exp requires a rank-1 input, got {:?}",
                t.shape()
            )));
        }
        let (value, _) = log1p_sum_exp_parts(t.data());
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(value), Op::Log1pSumExp { x }, needs, false))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Runs reverse-mode differentiation from a scalar loss.
    ///
    /// Gradients accumulate into `requires_grad` leaves; repeated calls
    /// keep accumulating (two calls double every leaf gradient).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        // Per-pass scratch gradients (interior nodes never keep state).
        let mut pass: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        pass.resize_with(loss.0 + 1, || None);
        pass[loss.0] = Some(vec![T::one()]);
        self.track_alloc(T::WIDTH as usize);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                pass[i] = None;
                continue;
            }
            let Some(g) = pass[i].take() else { continue };
            self.propagate(i, &g, &mut pass)?;
            let gbytes = g.len() * T::WIDTH as usize;
            if self.nodes[i].requires_grad {
                match &mut self.nodes[i].grad {
                    Some(acc) => {
                        for (a, gi) in acc.iter_mut().zip(&g) {
                            *a = *a + *gi;
                        }
                        self.live_bytes = self.live_bytes.saturating_sub(gbytes);
                    }
                    None => {
                        // buffer moves into the persistent grad; bytes were
                        // counted when the pass buffer was allocated
                        self.nodes[i].grad = Some(g);
                    }
                }
            } else {
                self.live_bytes = self.live_bytes.saturating_sub(gbytes);
            }
        }
        // Scratch buffers that never got visited die here.
        let scratch: usize = pass
            .iter()
            .flatten()
            .map(|g| g.len() * T::WIDTH as usize)
            .sum();
        self.live_bytes = self.live_bytes.saturating_sub(scratch);
        Ok(())
    }

    fn acc(&mut self, pass: &mut [Option<Vec<T>>], target: NodeId, contrib: &[T]) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut pass[target.0] {
            Some(buf) => {
                for (b, c) in buf.iter_mut().zip(contrib) {
                    *b = *b + *c;
                }
            }
            None => {
                self.track_alloc(contrib.len() * T::WIDTH as usize);
                pass[target.0] = Some(contrib.to_vec());
            }
        }
    }

    fn propagate(&mut self, i: usize, g: &[T], pass: &mut [Option<Vec<T>>]) -> Result<()> {
        // The op is read out by value-ish matching; contributions are
        // computed from input values and then accumulated.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (ga, gb) = matmul_backward(self.value(a), self.value(b), self.value(NodeId(i)).shape(), g);
                self.acc(pass, a, &ga);
                self.acc(pass, b, &gb);
            }
            Op::TransposeLast2 { x } => {
                let x = *x;
                let gt = transpose_grad(self.value(NodeId(i)).shape(), g);
                self.acc(pass, x, &gt);
            }
            Op::ConcatLast { parts } => {
                let parts = parts.clone();
                let out_w = *self.value(NodeId(i)).shape().last().unwrap();
                let rows = self.value(NodeId(i)).numel() / out_w;
                let mut offset = 0usize;
                for p in parts {
                    let w = *self.value(p).shape().last().unwrap();
                    let mut gp = vec![T::zero(); rows * w];
                    for r in 0..rows {
                        gp[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * out_w + offset..r * out_w + offset + w]);
                    }
                    self.acc(pass, p, &gp);
                    offset += w;
                }
            }
            Op::SliceLast { x, start } => {
                let (x, start) = (*x, *start);
                let in_w = *self.value(x).shape().last().unwrap();
                let out_w = *self.value(NodeId(i)).shape().last().unwrap();
                let rows = self.value(x).numel() / in_w;
                let mut gx = vec![T::zero(); self.value(x).numel()];
                for r in 0..rows {
                    gx[r * in_w + start..r * in_w + start + out_w]
                        .copy_from_slice(&g[r * out_w..(r + 1) * out_w]);
                }
                self.acc(pass, x, &gx);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.acc(pass, a, g);
                self.acc(pass, b, g);
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                self.acc(pass, a, g);
                let gn: Vec<T> = g.iter().map(|&v| -v).collect();
                self.acc(pass, b, &gn);
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let ga: Vec<T> = g.iter().zip(self.value(b).data()).map(|(&gv, &bv)| gv * bv).collect();
                let gb: Vec<T> = g.iter().zip(self.value(a).data()).map(|(&gv, &av)| gv * av).collect();
                self.acc(pass, a, &ga);
                self.acc(pass, b, &gb);
            }
            Op::AddBias { x, bias } => {
                let (x, bias) = (*x, *bias);
                self.acc(pass, x, g);
                let w = self.value(bias).numel();
                let mut gb = vec![T::zero(); w];
                for (i, &gv) in g.iter().enumerate() {
                    gb[i % w] = gb[i % w] + gv;
                }
                self.acc(pass, bias, &gb);
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let gx: Vec<T> = g.iter().map(|&v| v * c).collect();
                self.acc(pass, x, &gx);
            }
            Op::Relu { x } => {
                let x = *x;
                let gx: Vec<T> = g
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                self.acc(pass, x, &gx);
            }
            Op::Abs { x } => {
                let x = *x;
                let gx: Vec<T> = g
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(&gv, &xv)| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.acc(pass, x, &gx);
            }
            Op::Neg { x } => {
                let x = *x;
                let gx: Vec<T> = g.iter().map(|&v| -v).collect();
                self.acc(pass, x, &gx);
            }
            Op::Reshape { x } => {
                let x = *x;
                self.acc(pass, x, g);
            }
            Op::SoftmaxAxis { x, axis } => {
                let (x, axis) = (*x, *axis);
                let p = self.value(NodeId(i));
                let gx = softmax_backward_dense(p, axis, g)?;
                self.acc(pass, x, &gx);
            }
            Op::GateSoftmax { x, axis, mask } => {
                let (x, axis) = (*x, *axis);
                let mask = mask.clone();
                let p = self.value(NodeId(i));
                let gx = gate::gate_backward(p, &mask, axis, g)?;
                self.acc(pass, x, &gx);
            }
            Op::SumAll { x } => {
                let x = *x;
                let gx = vec![g[0]; self.value(x).numel()];
                self.acc(pass, x, &gx);
            }
            Op::MeanAll { x } => {
                let x = *x;
                let n = T::from_f64(self.value(x).numel() as f64);
                let gx = vec![g[0] / n; self.value(x).numel()];
                self.acc(pass, x, &gx);
            }
            Op::EmbedLookup { table, indices } => {
                let table = *table;
                let indices = indices.clone();
                let dim = self.value(table).shape()[1];
                let mut gt = vec![T::zero(); self.value(table).numel()];
                for (r, &idx) in indices.iter().enumerate() {
                    for d in 0..dim {
                        gt[idx * dim + d] = gt[idx * dim + d] + g[r * dim + d];
                    }
                }
                self.acc(pass, table, &gt);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (x, gamma, beta, eps) = (*x, *gamma, *beta, *eps);
                let (gx, gg, gb) = layer_norm_backward(self.value(x), self.value(gamma), eps, g);
                self.acc(pass, x, &gx);
                self.acc(pass, gamma, &gg);
                self.acc(pass, beta, &gb);
            }
            Op::CosineSim { u, v } => {
                let (u, v) = (*u, *v);
                let (c, nu, nv) = cosine_parts(self.value(u).data(), self.value(v).data())
                    .expect("validated at forward");
                let gu: Vec<T> = self
                    .value(u)
                    .data()
                    .iter()
                    .zip(self.value(v).data())
                    .map(|(&uv, &vv)| g[0] * (vv / (nu * nv) - c * uv / (nu * nu)))
                    .collect();
                let gv: Vec<T> = self
                    .value(u)
                    .data()
                    .iter()
                    .zip(self.value(v).data())
                    .map(|(&uv, &vv)| g[0] * (uv / (nu * nv) - c * vv / (nv * nv)))
                    .collect();
                self.acc(pass, u, &gu);
                self.acc(pass, v, &gv);
            }
            Op::Log1pSumExp { x } => {
                let x = *x;
                let (_, probs) = log1p_sum_exp_parts(self.value(x).data());
                let gx: Vec<T> = probs.iter().map(|&p| g[0] * p).collect();
                self.acc(pass, x, &gx);
            }
        }
        Ok(())
    }
}

// ── Kernels ─────────────────────────────────────────────────────────────

/// Normalizes a rank-2/3 shape to (batch, rows, cols, rank3 flag).
fn as_batched(shape: &[usize]) -> Result<(usize, usize, usize, bool)> {
    match shape.len() {
        2 => Ok((1, shape[0], shape[1], false)),
        3 => Ok((shape[0], shape[1], shape[2], true)),
        _ => Err(Error::shape(format!(
            "matmul operands must be rank 2 or 3, got {shape:?}"
        ))),
    }
}

fn matmul_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, m, ka, a3) = as_batched(a.shape())?;
    let (bb, kb, n, b3) = as_batched(b.shape())?;
    if ka != kb {
        return Err(Error::shape(format!(
            "inner extents differ: {ka} vs {kb}"
        )));
    }
    let broadcast_b = b3 == false && a3;
    if a3 && b3 && ba != bb {
        return Err(Error::shape(format!("batch extents differ: {ba} vs {bb}")));
    }
    if !a3 && b3 {
        return Err(Error::shape(
            "rank-2 lhs cannot multiply a rank-3 rhs".to_string(),
        ));
    }
    let batches = ba;
    let k = ka;
    let mut out = vec![T::zero(); batches * m * n];
    for bi in 0..batches {
        let abase = bi * m * k;
        let bbase = if broadcast_b || !b3 { 0 } else { bi * k * n };
        let cbase = bi * m * n;
        for i in 0..m {
            let arow = &a.data()[abase + i * k..abase + (i + 1) * k];
            let crow = &mut out[cbase + i * n..cbase + (i + 1) * n];
            for (l, &av) in arow.iter().enumerate() {
                if av == T::zero() {
                    continue; // sparse gate rows skip excluded entries
                }
                let brow = &b.data()[bbase + l * n..bbase + (l + 1) * n];
                for (cj, &bv) in crow.iter_mut().zip(brow) {
                    *cj = *cj + av * bv;
                }
            }
        }
    }
    let shape: Vec<usize> = if a3 {
        vec![batches, m, n]
    } else {
        vec![m, n]
    };
    Tensor::new(&shape, out)
}

fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    out_shape: &[usize],
    g: &[T],
) -> (Vec<T>, Vec<T>) {
    let (ba, m, k, a3) = as_batched(a.shape()).expect("checked at forward");
    let (_, _, n, b3) = as_batched(b.shape()).expect("checked at forward");
    let _ = out_shape;
    let batches = ba;
    let broadcast_b = !b3 && a3;
    let mut ga = vec![T::zero(); a.numel()];
    let mut gb = vec![T::zero(); b.numel()];
    for bi in 0..batches {
        let abase = bi * m * k;
        let bbase = if broadcast_b || !b3 { 0 } else { bi * k * n };
        let cbase = bi * m * n;
        for i in 0..m {
            let grow = &g[cbase + i * n..cbase + (i + 1) * n];
            // ga[i, l] = sum_j g[i, j] * b[l, j]
            let garow = &mut ga[abase + i * k..abase + (i + 1) * k];
            for l in 0..k {
                let brow = &b.data()[bbase + l * n..bbase + (l + 1) * n];
                let mut s = T::zero();
                for (gv, bv) in grow.iter().zip(brow) {
                    s = s + *gv * *bv;
                }
                garow[l] = garow[l] + s;
            }
            // gb[l, j] += a[i, l] * g[i, j]
            let arow = &a.data()[abase + i * k..abase + (i + 1) * k];
            for (l, &av) in arow.iter().enumerate() {
                if av == T::zero() {
                    continue;
                }
                let gbrow = &mut gb[bbase + l * n..bbase + (l + 1) * n];
                for (gb_j, &gv) in gbrow.iter_mut().zip(grow) {
                    *gb_j = *gb_j + av * gv;
                }
            }
        }
    }
    (ga, gb)
}

fn transpose_forward<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, m, n, rank3) = as_batched(t.shape()).map_err(|_| {
        Error::shape(format!(
            "transpose_last2 requires rank 2 or 3, got {:?}",
            t.shape()
        ))
    })?;
    let mut out = vec![T::zero(); t.numel()];
    for bi in 0..b {
        for i in 0..m {
            for j in 0..n {
                out[bi * m * n + j * m + i] = t.data()[bi * m * n + i * n + j];
            }
        }
    }
    let shape: Vec<usize> = if rank3 { vec![b, n, m] } else { vec![n, m] };
    Tensor::new(&shape, out)
}

fn transpose_grad<T: Scalar>(out_shape: &[usize], g: &[T]) -> Vec<T> {
    let (b, m, n, _) = as_batched(out_shape).expect("checked at forward");
    // out is [b, m, n]; input was [b, n, m]
    let mut gx = vec![T::zero(); g.len()];
    for bi in 0..b {
        for i in 0..m {
            for j in 0..n {
                gx[bi * m * n + j * m + i] = g[bi * m * n + i * n + j];
            }
        }
    }
    gx
}

fn zip_elementwise<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "elementwise shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data)
}

fn softmax_backward_dense<T: Scalar>(p: &Tensor<T>, axis: usize, g: &[T]) -> Result<Vec<T>> {
    let (lanes, len, stride) = axis_lanes(p.shape(), axis)?;
    let mut gx = vec![T::zero(); p.numel()];
    for lane in 0..lanes {
        let base = lane_start(lane, len, stride);
        let mut s = T::zero();
        for i in 0..len {
            let off = base + i * stride;
            s = s + g[off] * p.data()[off];
        }
        for i in 0..len {
            let off = base + i * stride;
            gx[off] = p.data()[off] * (g[off] - s);
        }
    }
    Ok(gx)
}

fn layer_norm_stats<T: Scalar>(row: &[T], eps: f64) -> (T, T) {
    let n = T::from_f64(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<T>()
        / n;
    let inv_sigma = T::one() / (var + T::from_f64(eps)).sqrt();
    (mean, inv_sigma)
}

fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: f64,
    g: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let w = *x.shape().last().unwrap();
    let rows = x.numel() / w;
    let n = T::from_f64(w as f64);
    let mut gx = vec![T::zero(); x.numel()];
    let mut gg = vec![T::zero(); w];
    let mut gb = vec![T::zero(); w];
    for r in 0..rows {
        let row = &x.data()[r * w..(r + 1) * w];
        let grow = &g[r * w..(r + 1) * w];
        let (mean, inv_sigma) = layer_norm_stats(row, eps);
        // ghat = dL/dxhat; gx = (ghat - mean(ghat) - xhat * mean(ghat*xhat)) / sigma
        let mut mean_gh = T::zero();
        let mut mean_ghx = T::zero();
        for i in 0..w {
            let xhat = (row[i] - mean) * inv_sigma;
            let gh = grow[i] * gamma.data()[i];
            mean_gh = mean_gh + gh;
            mean_ghx = mean_ghx + gh * xhat;
            gg[i] = gg[i] + grow[i] * xhat;
            gb[i] = gb[i] + grow[i];
        }
        mean_gh = mean_gh / n;
        mean_ghx = mean_ghx / n;
        for i in 0..w {
            let xhat = (row[i] - mean) * inv_sigma;
            let gh = grow[i] * gamma.data()[i];
            gx[r * w + i] = (gh - mean_gh - xhat * mean_ghx) * inv_sigma;
        }
    }
    (gx, gg, gb)
}

/// Cosine similarity of two equal-length slices; errors on zero norms.
pub fn cosine_value<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    cosine_parts(u, v).map(|(c, _, _)| c)
}

fn cosine_parts<T: Scalar>(u: &[T], v: &[T]) -> Result<(T, T, T)> {
    let mut dot = T::zero();
    let mut nu = T::zero();
    let mut nv = T::zero();
    for (&a, &b) in u.iter().zip(v) {
        dot = dot + a * b;
        nu = nu + a * a;
        nv = nv + b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu == T::zero() || nv == T::zero() {
        return Err(Error::numerical(
            "cosine similarity undefined for a zero-norm vector".to_string(),
        ));
    }
    Ok((dot / (nu * nv), nu, nv))
}

/// Returns `(ln(1 + sum exp(x)), softmax-with-implicit-zero probabilities)`.
fn log1p_sum_exp_parts<T: Scalar>(x: &[T]) -> (T, Vec<T>) {
    let mut m = T::zero(); // the implicit zero term participates in the max
    for &v in x {
        if v > m {
            m = v;
        }
    }
    let mut denom = (-m).exp();
    let mut exps = Vec::with_capacity(x.len());
    for &v in x {
        let e = (v - m).exp();
        exps.push(e);
        denom = denom + e;
    }
    let value = m + denom.ln();
    let probs = exps.into_iter().map(|e| e / denom).collect();
    (value, probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor<f64> {
        Tensor::from_slice(v).unwrap()
    }

    #[test]
    fn matmul_identity_passes_through() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), false);
        let b = tape.leaf(Tensor::new(&[1, 2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap(), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn matmul_dot_product() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap(), false);
        let b = tape.leaf(Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap(), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[1, 1]);
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_paper_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 7, 96]).unwrap(), false);
        let b = tape.leaf(Tensor::zeros(&[2, 96, 48]).unwrap(), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 7, 48]);
    }

    #[test]
    fn matmul_shape_mismatch_is_descriptive() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3, 4]).unwrap(), false);
        let b = tape.leaf(Tensor::zeros(&[2, 5, 6]).unwrap(), false);
        let err = tape.matmul(a, b).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "got {err:?}");
        assert!(err.to_string().contains('4') && err.to_string().contains('5'));
    }

    #[test]
    fn transpose_example_and_involution() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
        let t = tape.transpose_last2(x).unwrap();
        assert_eq!(tape.value(t).data(), &[1.0, 3.0, 2.0, 4.0]);
        let tt = tape.transpose_last2(t).unwrap();
        assert_eq!(tape.value(tt).data(), tape.value(x).data());

        let y = tape.leaf(Tensor::zeros(&[2, 7, 4]).unwrap(), false);
        let yt = tape.transpose_last2(y).unwrap();
        assert_eq!(tape.value(yt).shape(), &[2, 4, 7]);

        let r1 = tape.leaf(t1(&[1.0, 2.0]), false);
        assert!(tape.transpose_last2(r1).is_err());
    }

    #[test]
    fn concat_and_slice_round_trip_bit_exact() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(&[2, 2, 3], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap(), false);
        let b = tape.leaf(Tensor::new(&[2, 2, 2], (0..8).map(|i| i as f64 * 0.7).collect()).unwrap(), false);
        let c = tape.concat_last(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 2, 5]);
        let sa = tape.slice_last(c, 0, 3).unwrap();
        let sb = tape.slice_last(c, 3, 2).unwrap();
        assert_eq!(tape.value(sa).data(), tape.value(a).data());
        assert_eq!(tape.value(sb).data(), tape.value(b).data());

        let single = tape.concat_last(&[a]).unwrap();
        assert_eq!(tape.value(single).data(), tape.value(a).data());
    }

    #[test]
    fn concat_rejects_leading_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]).unwrap(), false);
        let b = tape.leaf(Tensor::zeros(&[3, 3]).unwrap(), false);
        assert!(tape.concat_last(&[a, b]).is_err());
    }

    #[test]
    fn relu_and_add_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[-1.0, 0.0, 2.0]), false);
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

        let z = tape.leaf(t1(&[0.0, 0.0, 0.0]), false);
        let s = tape.add(x, z).unwrap();
        assert_eq!(tape.value(s).data(), tape.value(x).data());
    }

    #[test]
    fn relu_gradient_masks_negative_side() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[-1.0, 2.0]), true);
        let r = tape.relu(x);
        let s = tape.sum_all(r);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[0.0, 0.0, 0.0]), false);
        let p = tape.softmax_axis(x, 0).unwrap();
        for &v in tape.value(p).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let big = tape.leaf(t1(&[1000.0, 1000.0]), false);
        let pb = tape.softmax_axis(big, 0).unwrap();
        assert!(tape.value(pb).all_finite());
        assert!((tape.value(pb).data()[0] - 0.5).abs() < 1e-15);

        // direct evaluation of exp(z_i) / sum_j exp(z_j) at z = [3, 1, 2]
        let z = tape.leaf(t1(&[3.0, 1.0, 2.0]), false);
        let pz = tape.softmax_axis(z, 0).unwrap();
        let e: Vec<f64> = [3.0f64, 1.0, 2.0].iter().map(|v| v.exp()).collect();
        let sum: f64 = e.iter().sum();
        for (got, want) in tape.value(pz).data().iter().zip(e.iter().map(|v| v / sum)) {
            assert!((got - want).abs() < 1e-12);
        }
        let want = [0.66524, 0.09003, 0.24473];
        for (got, want) in tape.value(pz).data().iter().zip(want) {
            assert!((got - want).abs() < 1e-5);
        }
    }

    #[test]
    fn softmax_rejects_empty_support() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), false);
        assert!(tape.softmax_axis(x, 0).is_err());
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3]).unwrap(), true);
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_square_sum() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_accumulates_and_unreached_leaves_stay_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]), true);
        let unused = tape.leaf(t1(&[5.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0, 8.0]);
        assert!(tape.grad(unused).is_none());
        assert_eq!(tape.grad_tensor(unused).data(), &[0.0]);
    }

    #[test]
    fn bias_gradient_sums_over_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap(), false);
        let b = tape.leaf(t1(&[1.0, 2.0, 3.0]), true);
        let y = tape.add_bias(x, b).unwrap();
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn log1p_sum_exp_matches_naive() {
        let (v, p) = log1p_sum_exp_parts(&[-16.0f64]);
        assert!((v - (1.0 + (-16.0f64).exp()).ln()).abs() < 1e-18);
        assert!((p[0] - (-16.0f64).exp() / (1.0 + (-16.0f64).exp())).abs() < 1e-18);

        let (v, _) = log1p_sum_exp_parts(&[16.0f64]);
        assert!((v - (1.0f64 + 16.0f64.exp()).ln()).abs() < 1e-9);

        // large inputs stay finite
        let (v, p) = log1p_sum_exp_parts(&[800.0f64, 700.0]);
        assert!(v.is_finite() && (v - 800.0).abs() < 1e-9);
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn live_bytes_track_allocations() {
        let mut tape = Tape::<f64>::new();
        assert_eq!(tape.live_bytes(), 0);
        let x = tape.leaf(Tensor::zeros(&[4, 4]).unwrap(), true);
        assert_eq!(tape.live_bytes(), 16 * 8);
        let s = tape.sum_all(x);
        assert_eq!(tape.live_bytes(), 17 * 8);
        tape.backward(s).unwrap();
        // leaf grad is retained, scratch released
        assert_eq!(tape.live_bytes(), 33 * 8);
        assert!(tape.peak_bytes() >= tape.live_bytes());
    }
}
