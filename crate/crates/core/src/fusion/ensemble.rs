use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_dsp::{mel_spectrogram, stft, DEFAULT_HOP_LENGTH, DEFAULT_WINDOW_SIZE, N_MELS};
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, ParamId, ParamSet, Real, Tensor};

pub const ENSEMBLE_INPUT_DIM: usize = 768;
pub const ENSEMBLE_OUTPUT_DIM: usize = 256;

/// The three pretrained-encoder slots of the audio ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubIdentity {
    GeneralAudio,
    Speech,
    AcousticScene,
}

impl StubIdentity {
    pub const ALL: [StubIdentity; 3] = [StubIdentity::GeneralAudio, StubIdentity::Speech, StubIdentity::AcousticScene];

    fn seed(self) -> u64 {
        match self {
            StubIdentity::GeneralAudio => 0xA57_0001,
            StubIdentity::Speech => 0xA57_0002,
            StubIdentity::AcousticScene => 0xA57_0003,
        }
    }
}

/// One embedding per encoder slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEmbedding {
    pub general: Vec<f64>,
    pub speech: Vec<f64>,
    pub scene: Vec<f64>,
}

impl EnsembleEmbedding {
    pub fn zeros(dim: usize) -> Self {
        EnsembleEmbedding {
            general: vec![0.0; dim],
            speech: vec![0.0; dim],
            scene: vec![0.0; dim],
        }
    }

    pub fn parts(&self) -> [&[f64]; 3] {
        [&self.general, &self.speech, &self.scene]
    }
}

/// Deterministic stand-ins for the pretrained audio encoders.
///
/// Each maps log-mel statistics (per-band mean and std over time, centered
/// on the clip's mean level) through its own fixed random projection and a
/// tanh.
#[derive(Debug, Clone)]
pub struct StubEncoders {
    projections: [Tensor; 3],
    dim: usize,
}

const STUB_FEATURES: usize = 2 * N_MELS;

impl Default for StubEncoders {
    fn default() -> Self {
        Self::new(ENSEMBLE_INPUT_DIM)
    }
}

impl StubEncoders {
    pub fn new(dim: usize) -> Self {
        let projections = StubIdentity::ALL.map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(id.seed());
            let mut p = ParamSet::<f64>::new();
            let pid = p.push_uniform("p", &[dim, STUB_FEATURES], STUB_FEATURES, &mut rng);
            p.get(pid).clone()
        });
        StubEncoders { projections, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn mel_features(samples: &[f64], sample_rate: u32) -> Result<Vec<f64>> {
        let mut padded;
        let samples = if samples.len() < DEFAULT_WINDOW_SIZE {
            padded = samples.to_vec();
            padded.resize(DEFAULT_WINDOW_SIZE, 0.0);
            &padded[..]
        } else {
            samples
        };
        let mel = mel_spectrogram(&stft(samples, DEFAULT_WINDOW_SIZE, DEFAULT_HOP_LENGTH, sample_rate)?);
        let logs = mel.bands.mapv(|v| (v + 1e-10).ln());
        let frames = logs.nrows() as f64;
        let mut f = Vec::with_capacity(STUB_FEATURES);
        for band in logs.columns() {
            f.push(band.sum() / frames);
        }
        for (j, band) in logs.columns().into_iter().enumerate() {
            let m = f[j];
            f.push((band.iter().map(|v| (v - m).powi(2)).sum::<f64>() / frames).sqrt());
        }
        let level = f[..N_MELS].iter().sum::<f64>() / N_MELS as f64;
        f[..N_MELS].iter_mut().for_each(|v| *v -= level);
        Ok(f)
    }

    pub fn embed(&self, samples: &[f64], sample_rate: u32) -> Result<EnsembleEmbedding> {
        let f = Self::mel_features(samples, sample_rate)?;
        let [general, speech, scene] = self.projections.each_ref().map(|p| {
            (0..self.dim)
                .map(|i| p.row(i).iter().zip(&f).map(|(a, b)| a * b).sum::<f64>().tanh())
                .collect()
        });
        Ok(EnsembleEmbedding { general, speech, scene })
    }
}

/// Parameter handles of the ensemble projection `W concat(e1, e2, e3) + b`,
/// with `W` stored `output x 3*input`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl EnsembleLayer {
    pub fn new<T: Real>(params: &mut ParamSet<T>, input_dim: usize, output_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = 3 * input_dim;
        EnsembleLayer {
            weight: params.push_uniform("ensemble.weight", &[output_dim, fan_in], fan_in, rng),
            bias: params.push_uniform("ensemble.bias", &[output_dim], fan_in, rng),
            input_dim,
            output_dim,
        }
    }

    /// `parts` are three `1 x input_dim` nodes; returns a `1 x output_dim` node.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, p: &[NodeId], parts: [NodeId; 3]) -> Result<NodeId> {
        let x = g.concat_cols(&parts)?;
        let y = g.matmul_nt(x, p[self.weight.index()])?;
        g.add_bias(y, p[self.bias.index()])
    }
}

/// Standalone audio-ensemble fusion layer.
#[derive(Debug, Clone)]
pub struct AudioEnsembleFusion<T: Real = f64> {
    params: ParamSet<T>,
    layer: EnsembleLayer,
}

impl AudioEnsembleFusion<f64> {
    pub fn new(seed: u64) -> Self {
        Self::with_dims(ENSEMBLE_INPUT_DIM, ENSEMBLE_OUTPUT_DIM, seed)
    }

    pub fn with_dims(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let layer = EnsembleLayer::new(&mut params, input_dim, output_dim, &mut rng);
        AudioEnsembleFusion { params, layer }
    }
}

impl<T: Real> AudioEnsembleFusion<T> {
    /// Builds the layer from an explicit `output x 3*input` matrix and bias.
    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [out, fan_in] = weight.shape() else {
            return Err(Error::shape("AudioEnsembleFusion", "a rank-2 weight", format!("{:?}", weight.shape())));
        };
        let (out, fan_in) = (*out, *fan_in);
        if fan_in % 3 != 0 || bias.len() != out {
            return Err(Error::shape(
                "AudioEnsembleFusion",
                format!("weight out x 3k and bias of {out}"),
                format!("{:?} / {:?}", weight.shape(), bias.shape()),
            ));
        }
        let mut params = ParamSet::new();
        let w = params.push("ensemble.weight", weight);
        let b = params.push("ensemble.bias", bias);
        Ok(AudioEnsembleFusion {
            params,
            layer: EnsembleLayer {
                weight: w,
                bias: b,
                input_dim: fan_in / 3,
                output_dim: out,
            },
        })
    }

    pub fn layer(&self) -> &EnsembleLayer {
        &self.layer
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn cast<U: Real>(&self) -> AudioEnsembleFusion<U> {
        AudioEnsembleFusion {
            params: self.params.cast(),
            layer: self.layer,
        }
    }

    pub fn fuse(&self, e1: &[T], e2: &[T], e3: &[T]) -> Result<Vec<T>> {
        let n = self.layer.input_dim;
        for (i, e) in [e1, e2, e3].iter().enumerate() {
            if e.len() != n {
                return Err(Error::invalid(format!("ensemble input {} has {} values, expected {n}", i + 1, e.len())));
            }
        }
        let inputs = [e1, e2, e3].map(|e| Tensor::from_parts(vec![1, n], e.to_vec()));
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let nodes = [g.leaf(&inputs[0]), g.leaf(&inputs[1]), g.leaf(&inputs[2])];
        let out = self.layer.forward(&mut g, &p, nodes)?;
        Ok(g.value(out).data().to_vec())
    }
}

/// `W concat(e1, e2, e3) + b`.
pub fn fuse_audio_ensemble<T: Real>(fusion: &AudioEnsembleFusion<T>, e1: &[T], e2: &[T], e3: &[T]) -> Result<Vec<T>> {
    fusion.fuse(e1, e2, e3)
}
