use ndarray::Array2;

use super::stft::Spectrogram;

pub const N_MELS: usize = 64;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, equally spaced on the mel scale over
/// `[0, sample_rate / 2]`. Adjacent triangles meet at each other's centers,
/// so the weights at any frequency sum to at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `[n_mels x freq_bins]`
    pub weights: Array2<f64>,
    /// `n_mels + 2` edge frequencies in Hz.
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, window_size: usize, sample_rate: u32) -> Self {
        let bins = window_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = Array2::zeros((n_mels, bins));
        for m in 0..n_mels {
            let (lo, c, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
            for k in 0..bins {
                let f = k as f64 * sample_rate as f64 / window_size as f64;
                let rise = (f - lo) / (c - lo);
                let fall = (hi - f) / (hi - c);
                weights[[m, k]] = rise.min(fall).max(0.0);
            }
        }
        MelFilterbank { weights, edges_hz }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `[time_frames x n_mels]`, filterbank applied to squared magnitudes.
    pub bands: Array2<f64>,
    pub filterbank: MelFilterbank,
}

pub fn mel_spectrogram(spec: &Spectrogram) -> MelSpectrogram {
    let filterbank = MelFilterbank::new(N_MELS, spec.window_size, spec.sample_rate);
    let power = spec.magnitudes.mapv(|m| m * m);
    let bands = power.dot(&filterbank.weights.t());
    MelSpectrogram { bands, filterbank }
}
