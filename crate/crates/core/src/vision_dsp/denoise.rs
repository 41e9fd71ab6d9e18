use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timebase::Frame;

use super::reflect;

/// Non-local means parameters: `(2r+1)^2` patches compared over a
/// `(2s+1)^2` search window, weights `exp(-d^2 / h^2)` where `d^2` is the
/// mean squared patch difference in gray levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlmParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    pub h: f64,
}

impl Default for NlmParams {
    fn default() -> Self {
        NlmParams {
            patch_radius: 1,
            search_radius: 3,
            h: 10.0,
        }
    }
}

pub fn preprocess_frame(frame: &Frame) -> Result<Frame> {
    nlm_denoise(frame, &NlmParams::default())
}

pub fn nlm_denoise(frame: &Frame, params: &NlmParams) -> Result<Frame> {
    let filtered = nlm_denoise_f64(frame, params)?;
    let pixels = filtered.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Frame::new(frame.width, frame.height, pixels, frame.timestamp)
}

/// Unrounded filter output.
///
/// For each search offset the squared-difference image is box-summed through
/// an integral image, so cost is independent of the patch size.
pub fn nlm_denoise_f64(frame: &Frame, params: &NlmParams) -> Result<Vec<f64>> {
    let (w, h) = (frame.width, frame.height);
    if w == 0 || h == 0 {
        return Err(Error::invalid("cannot denoise a zero-area frame"));
    }
    if frame.pixels.len() != w * h {
        return Err(Error::shape("nlm_denoise", w * h, frame.pixels.len()));
    }
    if params.h.is_nan() || params.h <= 0.0 {
        return Err(Error::invalid("NLM filtering strength must be positive"));
    }

    let pr = params.patch_radius as isize;
    let sr = params.search_radius as isize;
    let pad = pr + sr;
    let pw = w + 2 * pad as usize;
    let ph = h + 2 * pad as usize;
    let padded: Vec<f64> = (0..ph)
        .flat_map(|y| {
            let sy = reflect(y as isize - pad, h);
            (0..pw).map(move |x| (sy, reflect(x as isize - pad, w)))
        })
        .map(|(sy, sx)| frame.pixels[sy * w + sx] as f64)
        .collect();

    // Region where patch sums are needed: image grown by the patch radius.
    let rw = w + 2 * pr as usize;
    let rh = h + 2 * pr as usize;
    let patch_area = ((2 * pr + 1) * (2 * pr + 1)) as f64;
    let inv_h2 = 1.0 / (params.h * params.h);

    let mut acc = vec![0.0; w * h];
    let mut wsum = vec![0.0; w * h];
    let mut integral = vec![0.0; (rw + 1) * (rh + 1)];

    for dy in -sr..=sr {
        for dx in -sr..=sr {
            // integral[(y+1)*(rw+1) + (x+1)] = sum of diff^2 over [0..=x] x [0..=y]
            for y in 0..rh {
                let py = y as isize + sr;
                let mut row = 0.0;
                for x in 0..rw {
                    let px = x as isize + sr;
                    let a = padded[py as usize * pw + px as usize];
                    let b = padded[(py + dy) as usize * pw + (px + dx) as usize];
                    row += (a - b) * (a - b);
                    integral[(y + 1) * (rw + 1) + x + 1] = integral[y * (rw + 1) + x + 1] + row;
                }
            }
            let k = (2 * pr + 1) as usize;
            for y in 0..h {
                for x in 0..w {
                    let (x0, y0, x1, y1) = (x, y, x + k, y + k);
                    let s = integral[y1 * (rw + 1) + x1] - integral[y0 * (rw + 1) + x1]
                        - integral[y1 * (rw + 1) + x0]
                        + integral[y0 * (rw + 1) + x0];
                    let d2 = (s / patch_area).max(0.0);
                    let weight = (-d2 * inv_h2).exp();
                    let q = padded[(y as isize + pad + dy) as usize * pw + (x as isize + pad + dx) as usize];
                    acc[y * w + x] += weight * q;
                    wsum[y * w + x] += weight;
                }
            }
        }
    }

    Ok(acc.iter().zip(&wsum).map(|(a, s)| a / s).collect())
}
