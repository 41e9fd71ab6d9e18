//! Audio time-frequency representations and scalar spectral statistics.

mod cwt;
mod mel;
mod stats;
mod stft;

use std::fmt::Write as _;

use ndarray::Array2;

pub use cwt::{cwt_scalogram, default_scales, morlet_pseudo_frequency, morlet_scale_for_frequency, Scalogram, MORLET_OMEGA0};
pub use mel::{hz_to_mel, mel_spectrogram, mel_to_hz, MelFilterbank, MelSpectrogram, N_MELS};
pub use stats::{spectral_stats, SpectralStats, ROLLOFF_FRACTION};
pub use stft::{hann_window, stft, Spectrogram, DEFAULT_HOP_LENGTH, DEFAULT_WINDOW_SIZE};

/// Renders a 2-D grid as CSV, one row per line.
pub fn grid_to_csv(grid: &Array2<f64>) -> String {
    let mut out = String::with_capacity(grid.len() * 12);
    for row in grid.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}
