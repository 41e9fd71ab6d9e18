use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeedForward, Graph, LayerNorm, Linear, MultiHeadAttention, NodeId, ParamSet, Real, Tensor};

use super::train::{check_tokens, FusionExample, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasicConfig {
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub classes: usize,
}

impl Default for BasicConfig {
    fn default() -> Self {
        BasicConfig {
            visual_dim: 3,
            audio_dim: 4,
            hidden: 128,
            layers: 2,
            heads: 4,
            ffn: 512,
            classes: 2,
        }
    }
}

/// Post-norm self-attention encoder layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[NodeId], x: NodeId) -> Result<(NodeId, Vec<NodeId>)> {
        let (a, w) = self.attention.forward(g, p, x, x)?;
        let x = g.add(x, a)?;
        let x = self.norm1.forward(g, p, x)?;
        let f = self.ffn.forward(g, p, x)?;
        let x = g.add(x, f)?;
        Ok((self.norm2.forward(g, p, x)?, w))
    }
}

/// Early-fusion model: both token streams are projected, summed and run
/// through a small transformer encoder, then mean-pooled into motion logits.
#[derive(Debug, Clone)]
pub struct BasicFusionModel<T: Real = f64> {
    config: BasicConfig,
    params: ParamSet<T>,
    visual_proj: Linear,
    audio_proj: Linear,
    layers: Vec<EncoderLayer>,
    head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicOutput<T: Real = f64> {
    pub logits: Vec<T>,
    /// Per layer, per head: `T x T` attention weights.
    pub attention: Vec<Vec<Tensor<T>>>,
}

pub(crate) struct BasicNodes {
    pub logits: NodeId,
    pub attention: Vec<Vec<NodeId>>,
}

impl BasicFusionModel<f64> {
    pub fn new(config: BasicConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 || config.classes == 0 || config.visual_dim == 0 || config.audio_dim == 0 {
            return Err(Error::InvalidConfig(format!("degenerate basic fusion config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let visual_proj = Linear::new(&mut params, "visual_proj", config.visual_dim, config.hidden, true, &mut rng);
        let audio_proj = Linear::new(&mut params, "audio_proj", config.audio_dim, config.hidden, true, &mut rng);
        let layers = (0..config.layers)
            .map(|i| {
                let name = format!("layer{i}");
                Ok(EncoderLayer {
                    attention: MultiHeadAttention::new(&mut params, &format!("{name}.attn"), config.hidden, config.heads, &mut rng)?,
                    norm1: LayerNorm::new(&mut params, &format!("{name}.norm1"), config.hidden),
                    ffn: FeedForward::new(&mut params, &format!("{name}.ffn"), config.hidden, config.ffn, &mut rng),
                    norm2: LayerNorm::new(&mut params, &format!("{name}.norm2"), config.hidden),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(&mut params, "head", config.hidden, config.classes, true, &mut rng);
        Ok(BasicFusionModel {
            config,
            params,
            visual_proj,
            audio_proj,
            layers,
            head,
        })
    }

    /// Rebuilds the layout for `config` and fills it from a parameter file.
    pub fn load(config: BasicConfig, path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.assign_from(&ParamSet::<f64>::load(path)?)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.params.save(path)
    }
}

impl<T: Real> BasicFusionModel<T> {
    pub fn config(&self) -> &BasicConfig {
        &self.config
    }

    pub fn param_set(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn param_set_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> BasicFusionModel<U> {
        BasicFusionModel {
            config: self.config,
            params: self.params.cast(),
            visual_proj: self.visual_proj,
            audio_proj: self.audio_proj,
            layers: self.layers.clone(),
            head: self.head,
        }
    }

    pub(crate) fn forward_nodes<U: Real>(&self, g: &mut Graph<'_, U>, p: &[NodeId], visual: NodeId, audio: NodeId) -> Result<BasicNodes> {
        check_tokens(g.value(visual), g.value(audio), self.config.visual_dim, self.config.audio_dim)?;
        let v = self.visual_proj.forward(g, p, visual)?;
        let a = self.audio_proj.forward(g, p, audio)?;
        let mut x = g.add(v, a)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, w) = layer.forward(g, p, x)?;
            x = y;
            attention.push(w);
        }
        let pooled = g.mean_axis(x, 0)?;
        let logits = self.head.forward(g, p, pooled)?;
        Ok(BasicNodes { logits, attention })
    }

    /// Motion logits for one `T x visual_dim` / `T x audio_dim` token pair.
    pub fn forward(&self, visual: &Tensor<T>, audio: &Tensor<T>) -> Result<BasicOutput<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let (v, a) = (g.leaf(visual), g.leaf(audio));
        let nodes = self.forward_nodes(&mut g, &p, v, a)?;
        Ok(BasicOutput {
            logits: g.value(nodes.logits).data().to_vec(),
            attention: nodes
                .attention
                .iter()
                .map(|heads| heads.iter().map(|&w| g.value(w).clone()).collect())
                .collect(),
        })
    }

    pub fn predict(&self, visual: &Tensor<T>, audio: &Tensor<T>) -> Result<usize> {
        Ok(argmax(&self.forward(visual, audio)?.logits))
    }
}

pub(crate) fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl Trainable for BasicFusionModel<f64> {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn validate(&self, ex: &FusionExample) -> Result<()> {
        if ex.motion >= self.config.classes {
            return Err(Error::invalid(format!("motion label {} outside 0..{}", ex.motion, self.config.classes)));
        }
        check_tokens(&ex.visual, &ex.audio, self.config.visual_dim, self.config.audio_dim).map(|_| ())
    }

    fn example_loss<U: Real>(&self, g: &mut Graph<'_, U>, p: &[NodeId], ex: &FusionExample) -> Result<NodeId> {
        let v = g.input(ex.visual.cast());
        let a = g.input(ex.audio.cast());
        let out = self.forward_nodes(g, p, v, a)?;
        g.cross_entropy(out.logits, &[ex.motion])
    }
}
