use rand::Rng;

use crate::error::{Error, Result};

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamSet};
use super::real::Real;

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(params: &mut ParamSet<T>, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let weight = params.push_uniform(format!("{name}.weight"), &[in_dim, out_dim], in_dim, rng);
        let bias = bias.then(|| params.push_uniform(format!("{name}.bias"), &[out_dim], in_dim, rng));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let y = g.matmul(x, p[self.weight.index()])?;
        match self.bias {
            Some(b) => g.add_bias(y, p[b.index()]),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(params: &mut ParamSet<T>, name: &str, dim: usize) -> Self {
        use super::array::Tensor;
        LayerNorm {
            gamma: params.push(format!("{name}.gamma"), Tensor::full(&[dim], T::one())),
            beta: params.push(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        g.layer_norm(x, p[self.gamma.index()], p[self.beta.index()])
    }
}

/// Multi-head attention with separate query and key/value inputs.
///
/// The key projection has no bias: a bias on keys shifts every score in a
/// row by the same amount and cancels in the softmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(params: &mut ParamSet<T>, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidConfig(format!("{dim} hidden units cannot be split into {heads} heads")));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(params, &format!("{name}.q"), dim, dim, true, rng),
            key: Linear::new(params, &format!("{name}.k"), dim, dim, false, rng),
            value: Linear::new(params, &format!("{name}.v"), dim, dim, true, rng),
            output: Linear::new(params, &format!("{name}.o"), dim, dim, true, rng),
            heads,
        })
    }

    /// Returns the projected output and each head's attention-weight node.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        p: &[NodeId],
        query_in: NodeId,
        context: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let q = self.query.forward(g, p, query_in)?;
        let k = self.key.forward(g, p, context)?;
        let v = self.value.forward(g, p, context)?;
        let dh = self.query.out_dim / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, h * dh, dh)?, g.slice_cols(k, h * dh, dh)?, g.slice_cols(v, h * dh, dh)?)
            };
            let (o, w) = g.attention(qh, kh, vh)?;
            outs.push(o);
            weights.push(w);
        }
        let joined = if self.heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        Ok((self.output.forward(g, p, joined)?, weights))
    }
}

/// Two-layer GELU MLP applied row-wise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(params: &mut ParamSet<T>, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            hidden: Linear::new(params, &format!("{name}.fc1"), dim, hidden, true, rng),
            output: Linear::new(params, &format!("{name}.fc2"), hidden, dim, true, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let h = self.hidden.forward(g, p, x)?;
        let h = g.gelu(h);
        self.output.forward(g, p, h)
    }
}
