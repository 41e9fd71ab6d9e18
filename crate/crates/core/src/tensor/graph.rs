use std::borrow::Cow;

use crate::error::{Error, Result};

use super::array::Tensor;
use super::real::Real;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    SoftmaxRows(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    Gelu(NodeId),
    MeanRows(NodeId),
    MeanCols(NodeId),
    Concat(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize },
    SliceRows { x: NodeId, start: usize },
    SumAll(NodeId),
    MeanAll(NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<usize> },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op,
}

/// A tape of tensor operations supporting one reverse-mode sweep.
///
/// Leaves may borrow their tensors, so binding model parameters costs
/// nothing. Node ids are handed out in creation order, which is also a
/// topological order.
pub struct Graph<'a, T: Real = f64> {
    nodes: Vec<Node<'a, T>>,
    differentiated: bool,
}

/// Per-node gradients from [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Real = f64> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `node`; all zeros when the loss does not depend on it.
    pub fn wrt(&self, node: NodeId) -> Tensor<T> {
        match &self.grads[node.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[node.0]),
        }
    }

    pub fn get(&self, node: NodeId) -> Option<&Tensor<T>> {
        self.grads[node.0].as_ref()
    }
}

fn rank2<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        [c] => Ok((1, *c)),
        s => Err(Error::shape(op, "rank 1 or 2", format!("{s:?}"))),
    }
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let s = T::lit(0.797_884_560_802_865_4); // sqrt(2 / pi)
    let c = T::lit(0.044_715);
    let (one, half, three) = (T::one(), T::lit(0.5), T::lit(3.0));
    let t = (s * (x + c * x * x * x)).tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * s * (one + three * c * x * x);
    (y, dy)
}

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: T) -> T {
    gelu_parts(x).0
}

fn softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, shape: &[usize], f: impl FnOnce(&mut [T])) {
    let g = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(g.data_mut());
}

impl<'a, T: Real> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            differentiated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds an owned leaf.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Adds a leaf that borrows its tensor.
    pub fn leaf(&mut self, value: &'a Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn val(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = rank2("matmul", self.val(a))?;
        let (k2, n) = rank2("matmul", self.val(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("rhs with {k} rows"), format!("{:?}", self.val(b).shape())));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.val(a).data(), false, self.val(b).data(), false, &mut out, false);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = rank2("matmul_nt", self.val(a))?;
        let (n, k2) = rank2("matmul_nt", self.val(b))?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("rhs with {k} columns"), format!("{:?}", self.val(b).shape())));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.val(a).data(), false, self.val(b).data(), true, &mut out, false);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNt(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?}", self.val(a).shape()),
                format!("{:?}", self.val(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T, rec: Op) -> Result<NodeId> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.val(a), self.val(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let shape = x.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), rec))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds the vector `b` to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = rank2("add_bias", self.val(x))?;
        if self.val(b).len() != c {
            return Err(Error::shape("add_bias", format!("bias of {c}"), format!("{:?}", self.val(b).shape())));
        }
        let bias = self.val(b).data();
        let mut data = self.val(x).data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        let shape = self.val(x).shape().to_vec();
        debug_assert_eq!(data.len(), r * c);
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddBias(x, b)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let f = T::lit(factor);
        let v = self.val(a).map(|x| x * f);
        self.push(v, Op::Scale(a, factor))
    }

    /// Max-stabilized softmax of each row.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (_, c) = rank2("softmax_rows", self.val(a))?;
        let x = self.val(a);
        let mut data = vec![T::zero(); x.len()];
        for (row, out) in x.data().chunks_exact(c).zip(data.chunks_exact_mut(c)) {
            softmax_row(row, out);
        }
        let shape = x.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::SoftmaxRows(a)))
    }

    /// Row-wise layer normalization with the fixed epsilon [`LAYER_NORM_EPS`].
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (_, c) = rank2("layer_norm", self.val(x))?;
        if self.val(gamma).len() != c || self.val(beta).len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("gain and shift of {c}"),
                format!("{:?} / {:?}", self.val(gamma).shape(), self.val(beta).shape()),
            ));
        }
        let (xv, g, b) = (self.val(x), self.val(gamma).data(), self.val(beta).data());
        let mut data = vec![T::zero(); xv.len()];
        for (row, out) in xv.data().chunks_exact(c).zip(data.chunks_exact_mut(c)) {
            let (mean, rstd) = row_moments(row);
            for j in 0..c {
                out[j] = (row[j] - mean) * rstd * g[j] + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::LayerNorm { x, gamma, beta }))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    /// Mean over an axis of a rank-2 tensor: axis 0 gives `1 x cols`, axis 1
    /// gives `rows x 1`.
    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let (r, c) = rank2("mean_axis", self.val(a))?;
        let x = self.val(a);
        match axis {
            0 => {
                let mut out = vec![T::zero(); c];
                for row in x.data().chunks_exact(c) {
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                let n = T::lit(r as f64);
                out.iter_mut().for_each(|o| *o = *o / n);
                Ok(self.push(Tensor::from_parts(vec![1, c], out), Op::MeanRows(a)))
            }
            1 => {
                let n = T::lit(c as f64);
                let out = x.data().chunks_exact(c).map(|row| T::sum_iter(row.iter().copied()) / n).collect();
                Ok(self.push(Tensor::from_parts(vec![r, 1], out), Op::MeanCols(a)))
            }
            _ => Err(Error::invalid(format!("mean_axis: axis {axis} out of range for rank 2"))),
        }
    }

    /// Concatenation along the last axis; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat_cols of nothing"));
        };
        let (r, _) = rank2("concat_cols", self.val(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = rank2("concat_cols", self.val(p))?;
            if pr != r {
                return Err(Error::shape("concat_cols", format!("{r} rows"), format!("{pr} rows")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.val(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![r, total], data), Op::Concat(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = rank2("slice_cols", self.val(x))?;
        if start + len > c || len == 0 {
            return Err(Error::shape("slice_cols", format!("a non-empty range within {c} columns"), format!("{start}..{}", start + len)));
        }
        let src = self.val(x).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Tensor::from_parts(vec![r, len], data), Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = rank2("slice_rows", self.val(x))?;
        if start + len > r || len == 0 {
            return Err(Error::shape("slice_rows", format!("a non-empty range within {r} rows"), format!("{start}..{}", start + len)));
        }
        let data = self.val(x).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::from_parts(vec![len, c], data), Op::SliceRows { x, start }))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = T::sum_iter(self.val(a).data().iter().copied());
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let x = self.val(a);
        let s = T::sum_iter(x.data().iter().copied()) / T::lit(x.len().max(1) as f64);
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    /// Mean softmax cross-entropy of `logits` (`n x classes`) against one
    /// class index per row.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (r, c) = rank2("cross_entropy", self.val(logits))?;
        if targets.len() != r {
            return Err(Error::shape("cross_entropy", format!("{r} targets"), targets.len()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::invalid(format!("target class {t} out of range for {c} classes")));
        }
        let x = self.val(logits);
        let mut loss = T::zero();
        for (row, &t) in x.data().chunks_exact(c).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + T::sum_iter(row.iter().map(|&v| (v - max).exp())).ln();
            loss += lse - row[t];
        }
        let out = Tensor::scalar(loss / T::lit(r as f64));
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Scaled dot-product attention `softmax(q k^T / sqrt(d_k)) v`.
    /// Returns the output node and the attention-weight node.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId) -> Result<(NodeId, NodeId)> {
        let (_, dq) = rank2("attention", self.val(q))?;
        let (m, dk) = rank2("attention", self.val(k))?;
        let (mv, _) = rank2("attention", self.val(v))?;
        if dk == 0 {
            return Err(Error::invalid("attention needs d_k >= 1"));
        }
        if dq != dk {
            return Err(Error::shape("attention", format!("K with {dq} columns"), format!("{:?}", self.val(k).shape())));
        }
        if mv != m {
            return Err(Error::shape("attention", format!("V with {m} rows"), format!("{:?}", self.val(v).shape())));
        }
        let scores = self.matmul_nt(q, k)?;
        let scaled = self.scale(scores, 1.0 / (dk as f64).sqrt());
        let weights = self.softmax_rows(scaled)?;
        let out = self.matmul(weights, v)?;
        Ok((out, weights))
    }

    /// Reverse sweep from a one-element `loss`. A graph can be swept once.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<T>> {
        if self.differentiated {
            return Err(Error::invalid("backward already ran on this graph"));
        }
        if self.val(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.val(loss).shape()
            )));
        }
        self.differentiated = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[loss.0] = Some(Tensor::full(self.val(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let out = &self.nodes[i].value;
        let shape_of = |id: NodeId| self.val(id).shape().to_vec();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = rank2("", self.val(*a)).unwrap();
                let n = self.val(*b).cols();
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                accumulate(&mut grads[a.0], &shape_of(*a), |ga| T::gemm(m, n, k, gd, false, bv, true, ga, true));
                accumulate(&mut grads[b.0], &shape_of(*b), |gb| T::gemm(k, m, n, av, true, gd, false, gb, true));
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = rank2("", self.val(*a)).unwrap();
                let n = self.val(*b).rows();
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                accumulate(&mut grads[a.0], &shape_of(*a), |ga| T::gemm(m, n, k, gd, false, bv, false, ga, true));
                accumulate(&mut grads[b.0], &shape_of(*b), |gb| T::gemm(n, m, k, gd, true, av, false, gb, true));
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    accumulate(&mut grads[id.0], &shape_of(*id), |ga| ga.iter_mut().zip(gd).for_each(|(x, &d)| *x += d));
                }
            }
            Op::Sub(a, b) => {
                accumulate(&mut grads[a.0], &shape_of(*a), |ga| ga.iter_mut().zip(gd).for_each(|(x, &d)| *x += d));
                accumulate(&mut grads[b.0], &shape_of(*b), |gb| gb.iter_mut().zip(gd).for_each(|(x, &d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                accumulate(&mut grads[a.0], &shape_of(*a), |ga| {
                    for ((x, &d), &o) in ga.iter_mut().zip(gd).zip(bv) {
                        *x += d * o;
                    }
                });
                accumulate(&mut grads[b.0], &shape_of(*b), |gb| {
                    for ((x, &d), &o) in gb.iter_mut().zip(gd).zip(av) {
                        *x += d * o;
                    }
                });
            }
            Op::AddBias(x, b) => {
                accumulate(&mut grads[x.0], &shape_of(*x), |gx| gx.iter_mut().zip(gd).for_each(|(v, &d)| *v += d));
                let c = self.val(*b).len();
                accumulate(&mut grads[b.0], &shape_of(*b), |gb| {
                    for row in gd.chunks_exact(c) {
                        gb.iter_mut().zip(row).for_each(|(v, &d)| *v += d);
                    }
                });
            }
            Op::Scale(a, f) => {
                let f = T::lit(*f);
                accumulate(&mut grads[a.0], &shape_of(*a), |ga| ga.iter_mut().zip(gd).for_each(|(v, &d)| *v += d * f));
            }
            Op::SoftmaxRows(a) => {
                let c = out.cols();
                accumulate(&mut grads[a.0], &shape_of(*a), |ga| {
                    for ((gr, dr), yr) in ga.chunks_exact_mut(c).zip(gd.chunks_exact(c)).zip(out.data().chunks_exact(c)) {
                        let dot = T::sum_iter(dr.iter().zip(yr).map(|(&d, &y)| d * y));
                        for j in 0..c {
                            gr[j] += yr[j] * (dr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xv = self.val(*x);
                let c = xv.cols();
                let gam = self.val(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                accumulate(&mut grads[x.0], &shape_of(*x), |gx| {
                    let cn = T::lit(c as f64);
                    let mut xhat = vec![T::zero(); c];
                    let mut dxhat = vec![T::zero(); c];
                    for ((gr, dr), row) in gx.chunks_exact_mut(c).zip(gd.chunks_exact(c)).zip(xv.data().chunks_exact(c)) {
                        let (mean, rstd) = row_moments(row);
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..c {
                            xhat[j] = (row[j] - mean) * rstd;
                            dxhat[j] = dr[j] * gam[j];
                            sum_d += dxhat[j];
                            sum_dx += dxhat[j] * xhat[j];
                            dgamma[j] += dr[j] * xhat[j];
                            dbeta[j] += dr[j];
                        }
                        let (md, mdx) = (sum_d / cn, sum_dx / cn);
                        for j in 0..c {
                            gr[j] += rstd * (dxhat[j] - md - xhat[j] * mdx);
                        }
                    }
                });
                accumulate(&mut grads[gamma.0], &shape_of(*gamma), |gg| gg.iter_mut().zip(&dgamma).for_each(|(v, &d)| *v += d));
                accumulate(&mut grads[beta.0], &shape_of(*beta), |gb| gb.iter_mut().zip(&dbeta).for_each(|(v, &d)| *v += d));
            }
            Op::Gelu(a) => {
                let av = self.val(*a).data();
                accumulate(&mut grads[a.0], &shape_of(*a), |ga| {
                    for ((v, &d), &x) in ga.iter_mut().zip(gd).zip(av) {
                        *v += d * gelu_parts(x).1;
                    }
                });
            }
            Op::MeanRows(a) => {
                let (r, c) = rank2("", self.val(*a)).unwrap();
                let inv = T::lit(1.0 / r as f64);
                accumulate(&mut grads[a.0], &shape_of(*a), |ga| {
                    for row in ga.chunks_exact_mut(c) {
                        row.iter_mut().zip(gd).for_each(|(v, &d)| *v += d * inv);
                    }
                });
            }
            Op::MeanCols(a) => {
                let c = self.val(*a).cols();
                let inv = T::lit(1.0 / c as f64);
                accumulate(&mut grads[a.0], &shape_of(*a), |ga| {
                    for (row, &d) in ga.chunks_exact_mut(c).zip(gd) {
                        row.iter_mut().for_each(|v| *v += d * inv);
                    }
                });
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let r = out.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.val(*p).cols();
                    accumulate(&mut grads[p.0], &shape_of(*p), |gp| {
                        for i in 0..r {
                            let src = &gd[i * total + offset..i * total + offset + w];
                            gp[i * w..(i + 1) * w].iter_mut().zip(src).for_each(|(v, &d)| *v += d);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.val(*x).cols();
                let len = out.cols();
                accumulate(&mut grads[x.0], &shape_of(*x), |gx| {
                    for (i, src) in gd.chunks_exact(len).enumerate() {
                        gx[i * c + start..i * c + start + len].iter_mut().zip(src).for_each(|(v, &d)| *v += d);
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let off = start * out.cols();
                accumulate(&mut grads[x.0], &shape_of(*x), |gx| {
                    gx[off..off + gd.len()].iter_mut().zip(gd).for_each(|(v, &d)| *v += d);
                });
            }
            Op::SumAll(a) => {
                let d = gd[0];
                accumulate(&mut grads[a.0], &shape_of(*a), |ga| ga.iter_mut().for_each(|v| *v += d));
            }
            Op::MeanAll(a) => {
                let d = gd[0] / T::lit(self.val(*a).len().max(1) as f64);
                accumulate(&mut grads[a.0], &shape_of(*a), |ga| ga.iter_mut().for_each(|v| *v += d));
            }
            Op::CrossEntropy { logits, targets } => {
                let x = self.val(*logits);
                let c = x.cols();
                let scale = gd[0] / T::lit(targets.len() as f64);
                accumulate(&mut grads[logits.0], &shape_of(*logits), |gl| {
                    let mut p = vec![T::zero(); c];
                    for ((gr, row), &t) in gl.chunks_exact_mut(c).zip(x.data().chunks_exact(c)).zip(targets) {
                        softmax_row(row, &mut p);
                        for j in 0..c {
                            let y = if j == t { T::one() } else { T::zero() };
                            gr[j] += (p[j] - y) * scale;
                        }
                    }
                });
            }
        }
    }
}

fn row_moments<T: Real>(row: &[T]) -> (T, T) {
    let n = T::lit(row.len() as f64);
    let mean = T::sum_iter(row.iter().copied()) / n;
    let var = T::sum_iter(row.iter().map(|&v| (v - mean) * (v - mean))) / n;
    (mean, (var + T::lit(LAYER_NORM_EPS)).sqrt().recip())
}

/// Scaled dot-product attention on plain tensors.
pub fn attention<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (qn, kn, vn) = (g.leaf(q), g.leaf(k), g.leaf(v));
    let (out, _) = g.attention(qn, kn, vn)?;
    Ok(g.value(out).clone())
}
