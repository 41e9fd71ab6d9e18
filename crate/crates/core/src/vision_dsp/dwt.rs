use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timebase::Frame;

pub const SUBBAND_NAMES: [&str; 7] = ["LL2", "LH2", "HL2", "HH2", "LH1", "HL1", "HH1"];

/// Per-subband energy of a 2-level db2 decomposition. The first letter of a
/// subband name is the filter applied along rows (x), the second along
/// columns (y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveletEnergy {
    pub subband_energies: [f64; 7],
    pub total: f64,
}

impl WaveletEnergy {
    /// Sum over the six detail subbands (everything except LL2).
    pub fn detail_energy(&self) -> f64 {
        self.subband_energies[1..].iter().sum()
    }
}

/// Orthonormal Daubechies-2 analysis filters `(lowpass, highpass)`.
pub fn db2_filters() -> ([f64; 4], [f64; 4]) {
    let s3 = 3f64.sqrt();
    let d = 4.0 * 2f64.sqrt();
    let h = [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d];
    let g = [h[3], -h[2], h[1], -h[0]];
    (h, g)
}

/// One periodic analysis step on a strided line of even length.
fn analyze_line(input: &[f64], low: &mut [f64], high: &mut [f64], h: &[f64; 4], g: &[f64; 4]) {
    let n = input.len();
    for i in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for k in 0..4 {
            let x = input[(2 * i + k) % n];
            a += h[k] * x;
            d += g[k] * x;
        }
        low[i] = a;
        high[i] = d;
    }
}

/// Separable single-level 2-D step on a `w x h` block stored row-major.
/// Returns `(LL, LH, HL, HH)` each `(w/2) x (h/2)`.
fn analyze_2d(data: &[f64], w: usize, h: usize) -> [Vec<f64>; 4] {
    let (lo, hi) = db2_filters();
    let (hw, hh) = (w / 2, h / 2);
    // rows
    let mut row_l = vec![0.0; hw * h];
    let mut row_h = vec![0.0; hw * h];
    let mut lbuf = vec![0.0; hw];
    let mut hbuf = vec![0.0; hw];
    for y in 0..h {
        analyze_line(&data[y * w..(y + 1) * w], &mut lbuf, &mut hbuf, &lo, &hi);
        row_l[y * hw..(y + 1) * hw].copy_from_slice(&lbuf);
        row_h[y * hw..(y + 1) * hw].copy_from_slice(&hbuf);
    }
    // columns
    let mut col = vec![0.0; h];
    let mut cl = vec![0.0; hh];
    let mut ch = vec![0.0; hh];
    let mut split = |src: &[f64]| {
        let mut a = vec![0.0; hw * hh];
        let mut d = vec![0.0; hw * hh];
        for x in 0..hw {
            for y in 0..h {
                col[y] = src[y * hw + x];
            }
            analyze_line(&col, &mut cl, &mut ch, &lo, &hi);
            for y in 0..hh {
                a[y * hw + x] = cl[y];
                d[y * hw + x] = ch[y];
            }
        }
        (a, d)
    };
    let (ll, lh) = split(&row_l);
    let (hl, hh_band) = split(&row_h);
    [ll, lh, hl, hh_band]
}

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Two-level separable db2 decomposition with periodic extension.
///
/// Frames whose sides are not multiples of four are zero-padded up to the
/// next multiple first; padding adds no energy, so the subband energies sum to
/// the pixel sum of squares.
pub fn dwt2_energy(frame: &Frame) -> Result<WaveletEnergy> {
    if frame.width < 8 || frame.height < 8 {
        return Err(Error::invalid(format!(
            "wavelet energy needs at least 8x8 pixels, got {}x{}",
            frame.width, frame.height
        )));
    }
    let w = frame.width.next_multiple_of(4);
    let h = frame.height.next_multiple_of(4);
    let mut data = vec![0.0; w * h];
    for y in 0..frame.height {
        for x in 0..frame.width {
            data[y * w + x] = frame.get(x, y) as f64;
        }
    }

    let [ll1, lh1, hl1, hh1] = analyze_2d(&data, w, h);
    let [ll2, lh2, hl2, hh2] = analyze_2d(&ll1, w / 2, h / 2);
    let subband_energies = [
        energy(&ll2),
        energy(&lh2),
        energy(&hl2),
        energy(&hh2),
        energy(&lh1),
        energy(&hl1),
        energy(&hh1),
    ];
    Ok(WaveletEnergy {
        subband_energies,
        total: subband_energies.iter().sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timebase::Timestamp;

    fn sum_sq(f: &Frame) -> f64 {
        f.pixels.iter().map(|&p| (p as f64).powi(2)).sum()
    }

    #[test]
    fn filters_are_orthonormal() {
        let (h, g) = db2_filters();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&h, &h) - 1.0).abs() < 1e-15);
        assert!((dot(&g, &g) - 1.0).abs() < 1e-15);
        assert!(dot(&h, &g).abs() < 1e-15);
        assert!((h.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-15);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn zero_frame() {
        let e = dwt2_energy(&Frame::filled(16, 16, 0, Timestamp::ZERO)).unwrap();
        assert_eq!(e.total, 0.0);
        assert!(e.subband_energies.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_frame_lives_in_ll2() {
        let f = Frame::filled(24, 16, 77, Timestamp::ZERO);
        let e = dwt2_energy(&f).unwrap();
        let expected = 77.0f64.powi(2) * f.area() as f64;
        assert!((e.subband_energies[0] - expected).abs() / expected < 1e-12);
        assert!(e.detail_energy() < 1e-9 * expected);
    }

    #[test]
    fn conserves_energy_on_awkward_sizes() {
        for (w, h) in [(8, 8), (9, 13), (30, 17), (64, 48)] {
            let f = Frame::from_fn(w, h, Timestamp::ZERO, |x, y| ((x * 131 + y * 71 + x * y) % 256) as u8);
            let e = dwt2_energy(&f).unwrap();
            let s = sum_sq(&f);
            assert!(((e.total - s) / s).abs() < 1e-12, "{w}x{h}");
        }
    }

    #[test]
    fn too_small_is_invalid() {
        assert!(dwt2_energy(&Frame::filled(7, 20, 1, Timestamp::ZERO)).is_err());
    }
}
