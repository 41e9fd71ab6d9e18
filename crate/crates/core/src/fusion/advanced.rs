use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeedForward, Graph, LayerNorm, Linear, MultiHeadAttention, NodeId, ParamId, ParamSet, Real, Tensor};

use super::basic::argmax;
use super::ensemble::{EnsembleEmbedding, EnsembleLayer, ENSEMBLE_INPUT_DIM};
use super::labels::EVENT_CLASSES;
use super::train::{check_tokens, FusionExample, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvancedConfig {
    pub visual_dim: usize,
    pub audio_dim: usize,
    /// Hidden width; also the width of the fused ensemble embedding.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Longest token sequence the positional tables cover.
    pub max_len: usize,
    pub motion_classes: usize,
    pub event_classes: usize,
    /// Width of each ensemble encoder embedding.
    pub ensemble_dim: usize,
}

impl Default for AdvancedConfig {
    fn default() -> Self {
        AdvancedConfig {
            visual_dim: 4,
            audio_dim: 5,
            hidden: 256,
            layers: 4,
            heads: 8,
            ffn: 1024,
            max_len: 32,
            motion_classes: 2,
            event_classes: EVENT_CLASSES,
            ensemble_dim: ENSEMBLE_INPUT_DIM,
        }
    }
}

/// Bidirectional cross-attention layer: visual queries attend to audio and
/// audio queries attend to visual, both from the same inputs, followed by a
/// per-stream feed-forward block. Post-norm residuals throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossLayer {
    pub visual_attn: MultiHeadAttention,
    pub audio_attn: MultiHeadAttention,
    pub visual_norm1: LayerNorm,
    pub audio_norm1: LayerNorm,
    pub visual_ffn: FeedForward,
    pub audio_ffn: FeedForward,
    pub visual_norm2: LayerNorm,
    pub audio_norm2: LayerNorm,
}

pub(crate) struct CrossOut {
    pub visual: NodeId,
    pub audio: NodeId,
    pub visual_weights: Vec<NodeId>,
    pub audio_weights: Vec<NodeId>,
}

impl CrossLayer {
    fn new<T: Real>(params: &mut ParamSet<T>, name: &str, c: &AdvancedConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = c.hidden;
        Ok(CrossLayer {
            visual_attn: MultiHeadAttention::new(params, &format!("{name}.visual_attn"), d, c.heads, rng)?,
            audio_attn: MultiHeadAttention::new(params, &format!("{name}.audio_attn"), d, c.heads, rng)?,
            visual_norm1: LayerNorm::new(params, &format!("{name}.visual_norm1"), d),
            audio_norm1: LayerNorm::new(params, &format!("{name}.audio_norm1"), d),
            visual_ffn: FeedForward::new(params, &format!("{name}.visual_ffn"), d, c.ffn, rng),
            audio_ffn: FeedForward::new(params, &format!("{name}.audio_ffn"), d, c.ffn, rng),
            visual_norm2: LayerNorm::new(params, &format!("{name}.visual_norm2"), d),
            audio_norm2: LayerNorm::new(params, &format!("{name}.audio_norm2"), d),
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[NodeId], v: NodeId, a: NodeId) -> Result<CrossOut> {
        let (va, visual_weights) = self.visual_attn.forward(g, p, v, a)?;
        let (av, audio_weights) = self.audio_attn.forward(g, p, a, v)?;
        let v = g.add(v, va)?;
        let v = self.visual_norm1.forward(g, p, v)?;
        let a = g.add(a, av)?;
        let a = self.audio_norm1.forward(g, p, a)?;
        let fv = self.visual_ffn.forward(g, p, v)?;
        let v = g.add(v, fv)?;
        let v = self.visual_norm2.forward(g, p, v)?;
        let fa = self.audio_ffn.forward(g, p, a)?;
        let a = g.add(a, fa)?;
        let a = self.audio_norm2.forward(g, p, a)?;
        Ok(CrossOut {
            visual: v,
            audio: a,
            visual_weights,
            audio_weights,
        })
    }
}

/// Cross-modal fusion model with motion and event heads.
#[derive(Debug, Clone)]
pub struct AdvancedFusionModel<T: Real = f64> {
    config: AdvancedConfig,
    params: ParamSet<T>,
    ensemble: EnsembleLayer,
    visual_proj: Linear,
    audio_proj: Linear,
    visual_pos: ParamId,
    audio_pos: ParamId,
    layers: Vec<CrossLayer>,
    motion_head: Linear,
    event_head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvancedOutput<T: Real = f64> {
    pub motion_logits: Vec<T>,
    pub event_logits: Vec<T>,
    /// Per layer, per head, visual-query weights (`T x T`).
    pub visual_attention: Vec<Vec<Tensor<T>>>,
    /// Per layer, per head, audio-query weights (`T x T`).
    pub audio_attention: Vec<Vec<Tensor<T>>>,
}

impl<T: Real> AdvancedOutput<T> {
    pub fn motion(&self) -> usize {
        argmax(&self.motion_logits)
    }

    pub fn event(&self) -> usize {
        argmax(&self.event_logits)
    }
}

pub(crate) struct AdvancedNodes {
    pub motion: NodeId,
    pub event: NodeId,
    pub visual_attention: Vec<Vec<NodeId>>,
    pub audio_attention: Vec<Vec<NodeId>>,
}

impl AdvancedFusionModel<f64> {
    pub fn new(config: AdvancedConfig, seed: u64) -> Result<Self> {
        let c = &config;
        if c.hidden == 0 || c.max_len == 0 || c.motion_classes == 0 || c.event_classes == 0 || c.visual_dim == 0 || c.audio_dim == 0 {
            return Err(Error::InvalidConfig(format!("degenerate advanced fusion config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let ensemble = EnsembleLayer::new(&mut params, c.ensemble_dim, c.hidden, &mut rng);
        let visual_proj = Linear::new(&mut params, "visual_proj", c.visual_dim, c.hidden, true, &mut rng);
        let audio_proj = Linear::new(&mut params, "audio_proj", c.audio_dim, c.hidden, true, &mut rng);
        let visual_pos = params.push_uniform("visual_pos", &[c.max_len, c.hidden], c.hidden, &mut rng);
        let audio_pos = params.push_uniform("audio_pos", &[c.max_len, c.hidden], c.hidden, &mut rng);
        let layers = (0..c.layers)
            .map(|i| CrossLayer::new(&mut params, &format!("layer{i}"), c, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let motion_head = Linear::new(&mut params, "motion_head", 2 * c.hidden, c.motion_classes, true, &mut rng);
        let event_head = Linear::new(&mut params, "event_head", 2 * c.hidden, c.event_classes, true, &mut rng);
        Ok(AdvancedFusionModel {
            config,
            params,
            ensemble,
            visual_proj,
            audio_proj,
            visual_pos,
            audio_pos,
            layers,
            motion_head,
            event_head,
        })
    }

    pub fn load(config: AdvancedConfig, path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.assign_from(&ParamSet::<f64>::load(path)?)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.params.save(path)
    }
}

impl<T: Real> AdvancedFusionModel<T> {
    pub fn config(&self) -> &AdvancedConfig {
        &self.config
    }

    pub fn param_set(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn param_set_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> AdvancedFusionModel<U> {
        AdvancedFusionModel {
            config: self.config,
            params: self.params.cast(),
            ensemble: self.ensemble,
            visual_proj: self.visual_proj,
            audio_proj: self.audio_proj,
            visual_pos: self.visual_pos,
            audio_pos: self.audio_pos,
            layers: self.layers.clone(),
            motion_head: self.motion_head,
            event_head: self.event_head,
        }
    }

    fn embedding_nodes<U: Real>(&self, g: &mut Graph<'_, U>, emb: &EnsembleEmbedding) -> Result<[NodeId; 3]> {
        let n = self.config.ensemble_dim;
        let mut out = [NodeId(0); 3];
        for (slot, part) in out.iter_mut().zip(emb.parts()) {
            if part.len() != n {
                return Err(Error::invalid(format!("ensemble embedding has {} values, expected {n}", part.len())));
            }
            *slot = g.input(Tensor::from_parts(vec![1, n], part.iter().map(|&x| U::lit(x)).collect()));
        }
        Ok(out)
    }

    /// The model's own ensemble projection of three encoder embeddings.
    pub fn fuse_audio(&self, emb: &EnsembleEmbedding) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let parts = self.embedding_nodes(&mut g, emb)?;
        let out = self.ensemble.forward(&mut g, &p, parts)?;
        Ok(g.value(out).data().to_vec())
    }

    pub(crate) fn forward_nodes<U: Real>(
        &self,
        g: &mut Graph<'_, U>,
        p: &[NodeId],
        visual: NodeId,
        audio: NodeId,
        fused: NodeId,
    ) -> Result<AdvancedNodes> {
        let c = &self.config;
        let t = check_tokens(g.value(visual), g.value(audio), c.visual_dim, c.audio_dim)?;
        if t > c.max_len {
            return Err(Error::invalid(format!("{t} tokens exceed the positional table of {}", c.max_len)));
        }
        if g.value(fused).len() != c.hidden {
            return Err(Error::shape("advanced fusion", format!("fused embedding of {}", c.hidden), g.value(fused).len()));
        }
        let v = self.visual_proj.forward(g, p, visual)?;
        let pv = g.slice_rows(p[self.visual_pos.index()], 0, t)?;
        let mut v = g.add(v, pv)?;
        let a = self.audio_proj.forward(g, p, audio)?;
        let pa = g.slice_rows(p[self.audio_pos.index()], 0, t)?;
        let a = g.add(a, pa)?;
        let mut a = g.add_bias(a, fused)?;

        let mut visual_attention = Vec::with_capacity(self.layers.len());
        let mut audio_attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let out = layer.forward(g, p, v, a)?;
            v = out.visual;
            a = out.audio;
            visual_attention.push(out.visual_weights);
            audio_attention.push(out.audio_weights);
        }
        let mv = g.mean_axis(v, 0)?;
        let ma = g.mean_axis(a, 0)?;
        let pooled = g.concat_cols(&[mv, ma])?;
        Ok(AdvancedNodes {
            motion: self.motion_head.forward(g, p, pooled)?,
            event: self.event_head.forward(g, p, pooled)?,
            visual_attention,
            audio_attention,
        })
    }

    fn collect(g: &Graph<'_, T>, nodes: AdvancedNodes) -> AdvancedOutput<T> {
        let grab = |layers: &[Vec<NodeId>]| -> Vec<Vec<Tensor<T>>> {
            layers.iter().map(|h| h.iter().map(|&w| g.value(w).clone()).collect()).collect()
        };
        AdvancedOutput {
            motion_logits: g.value(nodes.motion).data().to_vec(),
            event_logits: g.value(nodes.event).data().to_vec(),
            visual_attention: grab(&nodes.visual_attention),
            audio_attention: grab(&nodes.audio_attention),
        }
    }

    /// Forward pass with an already fused `hidden`-wide audio embedding.
    pub fn forward(&self, visual: &Tensor<T>, audio: &Tensor<T>, fused: &[T]) -> Result<AdvancedOutput<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let (v, a) = (g.leaf(visual), g.leaf(audio));
        let f = g.input(Tensor::from_parts(vec![1, fused.len()], fused.to_vec()));
        let nodes = self.forward_nodes(&mut g, &p, v, a, f)?;
        Ok(Self::collect(&g, nodes))
    }

    /// Forward pass that runs the ensemble projection in the same graph.
    pub fn forward_with_embedding(&self, visual: &Tensor<T>, audio: &Tensor<T>, emb: &EnsembleEmbedding) -> Result<AdvancedOutput<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let (v, a) = (g.leaf(visual), g.leaf(audio));
        let parts = self.embedding_nodes(&mut g, emb)?;
        let f = self.ensemble.forward(&mut g, &p, parts)?;
        let nodes = self.forward_nodes(&mut g, &p, v, a, f)?;
        Ok(Self::collect(&g, nodes))
    }
}

impl Trainable for AdvancedFusionModel<f64> {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn validate(&self, ex: &FusionExample) -> Result<()> {
        let c = &self.config;
        if ex.motion >= c.motion_classes {
            return Err(Error::invalid(format!("motion label {} outside 0..{}", ex.motion, c.motion_classes)));
        }
        if ex.event >= c.event_classes {
            return Err(Error::invalid(format!("event label {} outside 0..{}", ex.event, c.event_classes)));
        }
        check_tokens(&ex.visual, &ex.audio, c.visual_dim, c.audio_dim).map(|_| ())
    }

    fn example_loss<U: Real>(&self, g: &mut Graph<'_, U>, p: &[NodeId], ex: &FusionExample) -> Result<NodeId> {
        let v = g.input(ex.visual.cast());
        let a = g.input(ex.audio.cast());
        let zeros;
        let emb = match &ex.ensemble {
            Some(e) => e,
            None => {
                zeros = EnsembleEmbedding::zeros(self.config.ensemble_dim);
                &zeros
            }
        };
        let parts = self.embedding_nodes(g, emb)?;
        let f = self.ensemble.forward(g, p, parts)?;
        let out = self.forward_nodes(g, p, v, a, f)?;
        let lm = g.cross_entropy(out.motion, &[ex.motion])?;
        let le = g.cross_entropy(out.event, &[ex.event])?;
        g.add(lm, le)
    }
}
