use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Linear, NodeId, ParamSet, Tensor};
use crate::timebase::Frame;

/// Side of the block-mean thumbnail the autoencoder sees.
pub const THUMB_SIDE: usize = 8;
pub const THUMB_LEN: usize = THUMB_SIDE * THUMB_SIDE;
pub const CODE_DIM: usize = 16;
pub const MIN_TRAINING_FRAMES: usize = 32;
/// Lower bound on the score normalizer.
pub const MIN_MSE_CAP: f64 = 1e-6;

const TRAIN_MSE_NAME: &str = "autoencoder.train_mse";

/// Block means of `frame` on an 8x8 grid, scaled to [0, 1]. Blocks split
/// the frame as evenly as integer boundaries allow.
pub fn thumbnail(frame: &Frame) -> Result<[f64; THUMB_LEN]> {
    if frame.width < THUMB_SIDE || frame.height < THUMB_SIDE {
        return Err(Error::invalid(format!(
            "frame {}x{} is smaller than the {THUMB_SIDE}x{THUMB_SIDE} thumbnail",
            frame.width, frame.height
        )));
    }
    let edges = |len: usize| -> Vec<usize> { (0..=THUMB_SIDE).map(|i| i * len / THUMB_SIDE).collect() };
    let (xs, ys) = (edges(frame.width), edges(frame.height));
    let mut out = [0.0; THUMB_LEN];
    for by in 0..THUMB_SIDE {
        for bx in 0..THUMB_SIDE {
            let mut sum = 0u64;
            for y in ys[by]..ys[by + 1] {
                let row = &frame.pixels[y * frame.width..(y + 1) * frame.width];
                sum += row[xs[bx]..xs[bx + 1]].iter().map(|&p| p as u64).sum::<u64>();
            }
            let count = (xs[bx + 1] - xs[bx]) * (ys[by + 1] - ys[by]);
            out[by * THUMB_SIDE + bx] = sum as f64 / count as f64 / 255.0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            learning_rate: 0.5,
            steps: 2000,
            seed: 0,
        }
    }
}

/// 64 -> 16 (GELU) -> 64 reconstruction model over frame thumbnails.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseAutoencoder {
    params: ParamSet,
    encoder: Linear,
    decoder: Linear,
    train_mse: f64,
}

impl DenseAutoencoder {
    /// Untrained model with seeded uniform initialization.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Linear::new(&mut params, "encoder", THUMB_LEN, CODE_DIM, true, &mut rng);
        let decoder = Linear::new(&mut params, "decoder", CODE_DIM, THUMB_LEN, true, &mut rng);
        DenseAutoencoder {
            params,
            encoder,
            decoder,
            train_mse: 0.0,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Mean squared error over the training set after the last update.
    pub fn train_mse(&self) -> f64 {
        self.train_mse
    }

    /// `max(10 x training MSE, 1e-6)`.
    pub fn mse_cap(&self) -> f64 {
        (10.0 * self.train_mse).max(MIN_MSE_CAP)
    }

    fn forward_nodes(&self, g: &mut Graph<'_>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let h = self.encoder.forward(g, p, x)?;
        let h = g.gelu(h);
        self.decoder.forward(g, p, h)
    }

    fn mse_node(&self, g: &mut Graph<'_>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let y = self.forward_nodes(g, p, x)?;
        let d = g.sub(y, x)?;
        let sq = g.mul(d, d)?;
        Ok(g.mean_all(sq))
    }

    pub fn reconstruct(&self, input: &[f64; THUMB_LEN]) -> Result<[f64; THUMB_LEN]> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = g.input(Tensor::new(vec![1, THUMB_LEN], input.to_vec())?);
        let y = self.forward_nodes(&mut g, &p, x)?;
        let mut out = [0.0; THUMB_LEN];
        out.copy_from_slice(g.value(y).data());
        Ok(out)
    }

    pub fn reconstruction_mse(&self, input: &[f64; THUMB_LEN]) -> Result<f64> {
        let y = self.reconstruct(input)?;
        Ok(input.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / THUMB_LEN as f64)
    }

    /// Full-batch gradient descent on the reconstruction MSE of `thumbs`.
    pub fn fit(&mut self, thumbs: &[[f64; THUMB_LEN]], config: &AutoencoderConfig) -> Result<f64> {
        if thumbs.len() < MIN_TRAINING_FRAMES {
            return Err(Error::invalid(format!(
                "autoencoder training needs at least {MIN_TRAINING_FRAMES} frames, got {}",
                thumbs.len()
            )));
        }
        if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                config.learning_rate
            )));
        }
        let batch = Tensor::new(vec![thumbs.len(), THUMB_LEN], thumbs.iter().flatten().copied().collect())?;
        let lr = config.learning_rate;
        for _ in 0..config.steps {
            let grads = {
                let mut g = Graph::new();
                let p = self.params.bind(&mut g);
                let x = g.leaf(&batch);
                let loss = self.mse_node(&mut g, &p, x)?;
                let grads = g.backward(loss)?;
                p.iter().map(|&n| grads.wrt(n)).collect::<Vec<_>>()
            };
            for (w, d) in self.params.tensors_mut().iter_mut().zip(&grads) {
                w.data_mut().iter_mut().zip(d.data()).for_each(|(w, d)| *w -= lr * d);
            }
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = g.leaf(&batch);
        let loss = self.mse_node(&mut g, &p, x)?;
        self.train_mse = g.value(loss).item();
        if !self.train_mse.is_finite() {
            return Err(Error::invalid("autoencoder training diverged"));
        }
        Ok(self.train_mse)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = self.params.clone();
        out.push(TRAIN_MSE_NAME, Tensor::scalar(self.train_mse));
        out.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let stored = ParamSet::<f64>::load(path)?;
        let mse = stored
            .by_name(TRAIN_MSE_NAME)
            .ok_or_else(|| Error::invalid(format!("parameter file lacks {TRAIN_MSE_NAME}")))?
            .item();
        let mut model = Self::new(0);
        let mut weights = ParamSet::new();
        for (name, t) in stored.iter().filter(|(n, _)| *n != TRAIN_MSE_NAME) {
            weights.push(name, t.clone());
        }
        model.params.assign_from(&weights)?;
        model.train_mse = mse;
        Ok(model)
    }
}

/// Trains an autoencoder on the thumbnails of `frames`.
pub fn autoencoder_train(frames: &[Frame], config: &AutoencoderConfig) -> Result<DenseAutoencoder> {
    if frames.len() < MIN_TRAINING_FRAMES {
        return Err(Error::invalid(format!(
            "autoencoder training needs at least {MIN_TRAINING_FRAMES} frames, got {}",
            frames.len()
        )));
    }
    let thumbs = frames.iter().map(thumbnail).collect::<Result<Vec<_>>>()?;
    let mut model = DenseAutoencoder::new(config.seed);
    model.fit(&thumbs, config)?;
    Ok(model)
}

/// `min(MSE / mse_cap, 1)` for one frame.
pub fn autoencoder_score(model: &DenseAutoencoder, frame: &Frame) -> Result<f64> {
    let mse = model.reconstruction_mse(&thumbnail(frame)?)?;
    Ok((mse / model.mse_cap()).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timebase::Timestamp;

    #[test]
    fn thumbnail_of_gradient_blocks() {
        let f = Frame::from_fn(16, 8, Timestamp::ZERO, |x, _| if x < 8 { 0 } else { 255 });
        let t = thumbnail(&f).unwrap();
        assert_eq!(t[0], 0.0);
        assert_eq!(t[7], 1.0);
        assert_eq!(t[3], 0.0);
        assert_eq!(t[4], 1.0);
        assert!(thumbnail(&Frame::filled(4, 8, 0, Timestamp::ZERO)).is_err());
    }

    #[test]
    fn uneven_blocks_average_correctly() {
        // 10 px wide: block edges at 0,1,2,3,5,6,7,8,10
        let f = Frame::from_fn(10, 8, Timestamp::ZERO, |x, _| (x * 20) as u8);
        let t = thumbnail(&f).unwrap();
        assert!((t[3] - 70.0 / 255.0).abs() < 1e-12);
        assert!((t[7] - 170.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_frames_rejected() {
        let frames = vec![Frame::filled(8, 8, 1, Timestamp::ZERO); 31];
        assert!(matches!(
            autoencoder_train(&frames, &AutoencoderConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.bin");
        let mut m = DenseAutoencoder::new(3);
        m.train_mse = 0.0125;
        m.save(&path).unwrap();
        let back = DenseAutoencoder::load(&path).unwrap();
        assert_eq!(back, m);
    }
}
