use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, ParamSet, Real, Tensor};

use super::ensemble::EnsembleEmbedding;

/// One labeled token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionExample {
    /// `T x visual_dim`, already normalized.
    pub visual: Tensor,
    /// `T x audio_dim`, already normalized.
    pub audio: Tensor,
    /// 0 = static, 1 = moving.
    pub motion: usize,
    /// Event class; ignored by the basic model.
    pub event: usize,
    /// Ensemble embeddings for the advanced model; zeros when absent.
    pub ensemble: Option<EnsembleEmbedding>,
}

/// Gradient descent with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_momentum(learning_rate, 0.0)
    }

    pub fn with_momentum(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        let lr = self.learning_rate;
        if self.momentum == 0.0 {
            for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
                p.data_mut().iter_mut().zip(g.data()).for_each(|(w, d)| *w -= lr * d);
            }
            return;
        }
        if self.velocity.len() != grads.len() {
            self.velocity = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        }
        for ((p, g), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, d), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vel = self.momentum * *vel + d;
                *w -= lr * *vel;
            }
        }
    }
}

/// A model that can be trained on [`FusionExample`]s.
pub trait Trainable {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Checks labels and shapes before any graph is built.
    fn validate(&self, example: &FusionExample) -> Result<()>;
    /// Loss of one example, built from the parameter nodes `p`.
    fn example_loss<T: Real>(&self, g: &mut Graph<'_, T>, p: &[NodeId], example: &FusionExample) -> Result<NodeId>;

    /// Mean loss over `batch`.
    fn batch_loss<T: Real>(&self, g: &mut Graph<'_, T>, p: &[NodeId], batch: &[FusionExample]) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let mut total: Option<NodeId> = None;
        for ex in batch {
            let l = self.example_loss(g, p, ex)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        Ok(g.scale(total.expect("batch is non-empty"), 1.0 / batch.len() as f64))
    }
}

/// One optimizer update on `batch`; returns the loss before the update.
pub fn train_step_with<M: Trainable>(model: &mut M, batch: &[FusionExample], opt: &mut Sgd) -> Result<f64> {
    for ex in batch {
        model.validate(ex)?;
    }
    let (loss, grads) = {
        let mut g = Graph::new();
        let p = model.params().bind(&mut g);
        let loss = model.batch_loss(&mut g, &p, batch)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        (value, p.iter().map(|&n| grads.wrt(n)).collect::<Vec<_>>())
    };
    if !loss.is_finite() {
        return Err(Error::invalid(format!("training loss became {loss}")));
    }
    opt.step(model.params_mut(), &grads);
    Ok(loss)
}

/// Plain gradient-descent step at `learning_rate`.
pub fn train_step<M: Trainable>(model: &mut M, batch: &[FusionExample], learning_rate: f64) -> Result<f64> {
    train_step_with(model, batch, &mut Sgd::new(learning_rate))
}

pub(crate) fn check_tokens(visual: &Tensor<impl Real>, audio: &Tensor<impl Real>, vdim: usize, adim: usize) -> Result<usize> {
    let t = visual.rows();
    if visual.rank() != 2 || audio.rank() != 2 {
        return Err(Error::invalid("token sequences must be rank-2 (tokens x features)"));
    }
    if t == 0 {
        return Err(Error::invalid("token sequence is empty"));
    }
    if audio.rows() != t {
        return Err(Error::invalid(format!("{t} visual tokens but {} audio tokens", audio.rows())));
    }
    if visual.cols() != vdim {
        return Err(Error::shape("fusion visual tokens", format!("{vdim} features"), visual.cols()));
    }
    if audio.cols() != adim {
        return Err(Error::shape("fusion audio tokens", format!("{adim} features"), audio.cols()));
    }
    Ok(t)
}
