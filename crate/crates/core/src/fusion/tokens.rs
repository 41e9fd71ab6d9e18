use serde::{Deserialize, Serialize};

use crate::audio_dsp::{spectral_stats, SpectralStats};
use crate::detect_track::Detection;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::timebase::AlignedWindow;
use crate::vision_dsp::{FlowStats, WaveletEnergy};

/// Per-frame visual summary fed to the fusion models.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VisualToken {
    pub bbox_count: usize,
    pub mean_confidence: f64,
    /// Detail-band wavelet energy of the frame.
    pub wavelet_energy: f64,
    /// Mean optical-flow magnitude, px/frame. Only the advanced model reads it.
    pub flow_mean_magnitude: f64,
}

/// Per-window audio summary fed to the fusion models.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AudioToken {
    pub zcr: f64,
    pub centroid_hz: f64,
    pub bandwidth_hz: f64,
    pub rolloff_hz: f64,
    /// Only the advanced model reads it.
    pub energy: f64,
}

/// Which feature subset a token contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenLayout {
    Basic,
    Advanced,
}

impl TokenLayout {
    pub fn visual_dim(self) -> usize {
        match self {
            TokenLayout::Basic => 3,
            TokenLayout::Advanced => 4,
        }
    }

    pub fn audio_dim(self) -> usize {
        match self {
            TokenLayout::Basic => 4,
            TokenLayout::Advanced => 5,
        }
    }
}

impl VisualToken {
    pub fn features(&self, layout: TokenLayout) -> Vec<f64> {
        let mut f = vec![self.bbox_count as f64, self.mean_confidence, self.wavelet_energy];
        if layout == TokenLayout::Advanced {
            f.push(self.flow_mean_magnitude);
        }
        f
    }
}

impl AudioToken {
    pub fn from_stats(s: &SpectralStats) -> Self {
        AudioToken {
            zcr: s.zcr,
            centroid_hz: s.centroid_hz,
            bandwidth_hz: s.bandwidth_hz,
            rolloff_hz: s.rolloff_hz,
            energy: s.energy,
        }
    }

    pub fn features(&self, layout: TokenLayout) -> Vec<f64> {
        let mut f = vec![self.zcr, self.centroid_hz, self.bandwidth_hz, self.rolloff_hz];
        if layout == TokenLayout::Advanced {
            f.push(self.energy);
        }
        f
    }
}

/// One visual token per frame. The three inputs must be frame-aligned; the
/// first frame of a burst has no predecessor and takes zero flow.
pub fn build_visual_tokens(
    detections: &[Vec<Detection>],
    wavelets: &[WaveletEnergy],
    flows: &[FlowStats],
) -> Result<Vec<VisualToken>> {
    if detections.len() != wavelets.len() || detections.len() != flows.len() {
        return Err(Error::invalid(format!(
            "visual token inputs are not aligned: {} detection lists, {} wavelet energies, {} flow stats",
            detections.len(),
            wavelets.len(),
            flows.len()
        )));
    }
    Ok(detections
        .iter()
        .zip(wavelets)
        .zip(flows)
        .map(|((dets, w), f)| {
            let mean_confidence = if dets.is_empty() {
                0.0
            } else {
                dets.iter().map(|d| d.confidence).sum::<f64>() / dets.len() as f64
            };
            VisualToken {
                bbox_count: dets.len(),
                mean_confidence,
                wavelet_energy: w.detail_energy(),
                flow_mean_magnitude: f.mean_magnitude,
            }
        })
        .collect())
}

/// One audio token per aligned window, from its spectral statistics.
pub fn build_audio_tokens(windows: &[AlignedWindow], sample_rate: u32) -> Result<Vec<AudioToken>> {
    if windows.is_empty() {
        return Err(Error::invalid("no audio windows to tokenize"));
    }
    windows
        .iter()
        .map(|w| spectral_stats(&w.samples, sample_rate).map(|s| AudioToken::from_stats(&s)))
        .collect()
}

/// Per-feature z-normalization fitted on training tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    /// Identity normalization for `dim` features.
    pub fn identity(dim: usize) -> Self {
        FeatureNorm {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and std per column. Constant columns get std 1 so
    /// they map to zero rather than blowing up.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::invalid("cannot fit a feature normalization on zero rows"));
        };
        let dim = first.len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::shape("FeatureNorm::fit", dim, r.len()));
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s > 1e-9 * (1.0 + mean[j].abs()) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureNorm { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Normalizes each row and stacks them into a `rows x dim` tensor.
    pub fn to_tensor<T: Real>(&self, rows: &[Vec<f64>]) -> Result<Tensor<T>> {
        let dim = self.dim();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::shape("FeatureNorm::to_tensor", dim, r.len()));
            }
            data.extend(self.apply(r).into_iter().map(T::lit));
        }
        Tensor::new(vec![rows.len(), dim], data)
    }
}

/// Normalizations for both token streams of one model layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenNorm {
    pub layout: TokenLayout,
    pub visual: FeatureNorm,
    pub audio: FeatureNorm,
}

impl TokenNorm {
    pub fn identity(layout: TokenLayout) -> Self {
        TokenNorm {
            layout,
            visual: FeatureNorm::identity(layout.visual_dim()),
            audio: FeatureNorm::identity(layout.audio_dim()),
        }
    }

    pub fn fit(layout: TokenLayout, visual: &[VisualToken], audio: &[AudioToken]) -> Result<Self> {
        let v: Vec<Vec<f64>> = visual.iter().map(|t| t.features(layout)).collect();
        let a: Vec<Vec<f64>> = audio.iter().map(|t| t.features(layout)).collect();
        Ok(TokenNorm {
            layout,
            visual: FeatureNorm::fit(&v)?,
            audio: FeatureNorm::fit(&a)?,
        })
    }

    pub fn visual_tensor<T: Real>(&self, tokens: &[VisualToken]) -> Result<Tensor<T>> {
        let rows: Vec<Vec<f64>> = tokens.iter().map(|t| t.features(self.layout)).collect();
        self.visual.to_tensor(&rows)
    }

    pub fn audio_tensor<T: Real>(&self, tokens: &[AudioToken]) -> Result<Tensor<T>> {
        let rows: Vec<Vec<f64>> = tokens.iter().map(|t| t.features(self.layout)).collect();
        self.audio.to_tensor(&rows)
    }
}
