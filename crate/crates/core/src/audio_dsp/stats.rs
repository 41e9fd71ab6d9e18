use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of spectral energy below the rolloff frequency.
pub const ROLLOFF_FRACTION: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectralStats {
    pub zcr: f64,
    pub centroid_hz: f64,
    pub bandwidth_hz: f64,
    pub rolloff_hz: f64,
    pub energy: f64,
}

/// Scalar statistics over the whole (unwindowed) signal.
///
/// Centroid and bandwidth weight the one-sided magnitude spectrum; rolloff
/// accumulates squared magnitude. A silent signal yields all zeros.
pub fn spectral_stats(samples: &[f64], sample_rate: u32) -> Result<SpectralStats> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "spectral stats need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let n = samples.len();

    let crossings = samples
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count();
    let zcr = crossings as f64 / (n - 1) as f64;
    let energy = samples.iter().map(|s| s * s).sum::<f64>() / n as f64;

    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let bins = n / 2 + 1;
    let df = sample_rate as f64 / n as f64;
    let mags: Vec<f64> = buf[..bins].iter().map(|c| c.norm()).collect();

    let mag_total: f64 = mags.iter().sum();
    let power_total: f64 = mags.iter().map(|m| m * m).sum();
    if mag_total <= 0.0 || power_total <= 0.0 {
        return Ok(SpectralStats {
            zcr,
            energy,
            ..SpectralStats::default()
        });
    }

    let centroid = mags.iter().enumerate().map(|(k, m)| k as f64 * df * m).sum::<f64>() / mag_total;
    let spread = mags
        .iter()
        .enumerate()
        .map(|(k, m)| (k as f64 * df - centroid).powi(2) * m)
        .sum::<f64>()
        / mag_total;

    let target = ROLLOFF_FRACTION * power_total;
    let mut cumulative = 0.0;
    let mut rolloff_bin = bins - 1;
    for (k, m) in mags.iter().enumerate() {
        cumulative += m * m;
        if cumulative >= target {
            rolloff_bin = k;
            break;
        }
    }

    Ok(SpectralStats {
        zcr,
        centroid_hz: centroid,
        bandwidth_hz: spread.max(0.0).sqrt(),
        rolloff_hz: rolloff_bin as f64 * df,
        energy,
    })
}
