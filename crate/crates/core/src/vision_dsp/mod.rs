//! Frame preprocessing, wavelet texture energy and dense optical flow.

mod denoise;
mod dwt;
mod flow;

pub use denoise::{nlm_denoise, nlm_denoise_f64, preprocess_frame, NlmParams};
pub use dwt::{db2_filters, dwt2_energy, WaveletEnergy, SUBBAND_NAMES};
pub use flow::{dense_flow, flow_stats, DenseFlow, FlowField, FlowStats, HornSchunck};

/// Mirror index into `0..n` without repeating the edge sample.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

#[inline]
pub(crate) fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}
