use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_SIZE: usize = 1024;
pub const DEFAULT_HOP_LENGTH: usize = 512;

/// Magnitude STFT, `[time_frames x (window_size / 2 + 1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Array2<f64>,
    pub window_size: usize,
    pub hop_length: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn time_frames(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn freq_bins(&self) -> usize {
        self.magnitudes.ncols()
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.window_size as f64
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn stft(samples: &[f64], window_size: usize, hop_length: usize, sample_rate: u32) -> Result<Spectrogram> {
    if !window_size.is_power_of_two() || window_size < 2 {
        return Err(Error::invalid(format!("STFT window size {window_size} is not a power of two")));
    }
    if hop_length == 0 {
        return Err(Error::invalid("STFT hop length must be positive"));
    }
    if samples.len() < window_size {
        return Err(Error::invalid(format!(
            "STFT needs at least {window_size} samples, got {}",
            samples.len()
        )));
    }
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }

    let frames = 1 + (samples.len() - window_size) / hop_length;
    let bins = window_size / 2 + 1;
    let window = hann_window(window_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_size);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); window_size];
    let mut magnitudes = Array2::zeros((frames, bins));

    for t in 0..frames {
        let chunk = &samples[t * hop_length..t * hop_length + window_size];
        for ((b, &s), &w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, m) in magnitudes.row_mut(t).iter_mut().enumerate() {
            *m = buf[k].norm();
        }
    }

    Ok(Spectrogram {
        magnitudes,
        window_size,
        hop_length,
        sample_rate,
    })
}
