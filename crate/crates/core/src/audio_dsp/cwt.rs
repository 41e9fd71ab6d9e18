use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const MORLET_OMEGA0: f64 = 6.0;

/// The Gaussian envelope is truncated at this many scale units.
const SUPPORT: f64 = 5.0;

const DEFAULT_SCALE_COUNT: usize = 32;
const DEFAULT_FMIN_HZ: f64 = 50.0;
const DEFAULT_FMAX_HZ: f64 = 8000.0;

/// Magnitude scalogram, `[scales x samples]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    pub magnitudes: Array2<f64>,
    /// Scales in seconds, strictly increasing.
    pub scales: Vec<f64>,
    pub sample_rate: u32,
}

fn fourier_factor() -> f64 {
    4.0 * PI / (MORLET_OMEGA0 + (2.0 + MORLET_OMEGA0 * MORLET_OMEGA0).sqrt())
}

/// Equivalent Fourier frequency (Hz) of a Morlet scale given in seconds.
pub fn morlet_pseudo_frequency(scale_s: f64) -> f64 {
    1.0 / (fourier_factor() * scale_s)
}

pub fn morlet_scale_for_frequency(hz: f64) -> f64 {
    1.0 / (fourier_factor() * hz)
}

/// 32 log-spaced scales spanning pseudo-frequencies 50 Hz up to
/// min(8 kHz, Nyquist), returned in increasing scale order.
pub fn default_scales(sample_rate: u32) -> Vec<f64> {
    let fmax = DEFAULT_FMAX_HZ.min(sample_rate as f64 / 2.0);
    let smin = morlet_scale_for_frequency(fmax);
    let smax = morlet_scale_for_frequency(DEFAULT_FMIN_HZ);
    let n = DEFAULT_SCALE_COUNT;
    (0..n)
        .map(|i| smin * (smax / smin).powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// Sampled, energy-normalized Morlet wavelet at `scale_s`, indices `-k..=k`.
pub(crate) fn sampled_morlet(scale_s: f64, sample_rate: u32) -> (usize, Vec<Complex<f64>>) {
    let dt = 1.0 / sample_rate as f64;
    let k = (SUPPORT * scale_s / dt).ceil() as usize;
    let norm = (dt / scale_s).sqrt() * PI.powf(-0.25);
    let taps = (0..=2 * k)
        .map(|i| {
            let t = (i as f64 - k as f64) * dt / scale_s;
            Complex::from_polar(norm * (-0.5 * t * t).exp(), MORLET_OMEGA0 * t)
        })
        .collect();
    (k, taps)
}

/// `W(s, n) = sum_j x[n + j] * conj(psi_s[j])`, evaluated per scale by
/// multiplying spectra on a zero-padded grid long enough that the circular
/// product equals the linear correlation.
pub fn cwt_scalogram(samples: &[f64], scales: &[f64], sample_rate: u32) -> Result<Scalogram> {
    if samples.is_empty() {
        return Err(Error::invalid("CWT of an empty signal"));
    }
    if scales.is_empty() {
        return Err(Error::invalid("CWT needs at least one scale"));
    }
    if let Some(bad) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::invalid(format!("CWT scale must be positive, got {bad}")));
    }
    if scales.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("CWT scales must be strictly increasing"));
    }
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }

    let n = samples.len();
    let wavelets: Vec<_> = scales.iter().map(|&s| sampled_morlet(s, sample_rate)).collect();
    let kmax = wavelets.iter().map(|(k, _)| *k).max().unwrap_or(0);
    let len = (n + 2 * kmax + 1).next_power_of_two();

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);

    let mut spectrum: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    spectrum.resize(len, Complex::default());
    fwd.process(&mut spectrum);

    let mut magnitudes = Array2::zeros((scales.len(), n));
    let mut kernel = vec![Complex::default(); len];
    let scale_inv = 1.0 / len as f64;
    for (row, (k, taps)) in wavelets.iter().enumerate() {
        // h[i] = conj(psi[-i]) for i in -k..=k, stored circularly.
        kernel.fill(Complex::default());
        for (idx, tap) in taps.iter().enumerate() {
            let j = idx as i64 - *k as i64;
            let i = (-j).rem_euclid(len as i64) as usize;
            kernel[i] = tap.conj();
        }
        fwd.process(&mut kernel);
        for (h, x) in kernel.iter_mut().zip(&spectrum) {
            *h *= x;
        }
        inv.process(&mut kernel);
        for (m, c) in magnitudes.row_mut(row).iter_mut().zip(&kernel) {
            *m = c.norm() * scale_inv;
        }
    }

    Ok(Scalogram {
        magnitudes,
        scales: scales.to_vec(),
        sample_rate,
    })
}
