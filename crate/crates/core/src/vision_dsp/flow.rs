use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timebase::Frame;

use super::clamp_index;

/// Per-pixel motion `(u, v)` in pixels/frame, each `[height x width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            u: Array2::zeros((height, width)),
            v: Array2::zeros((height, width)),
        }
    }

    pub fn width(&self) -> usize {
        self.u.ncols()
    }

    pub fn height(&self) -> usize {
        self.u.nrows()
    }

    /// Two planes, `u` then `v`, separated by a blank line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, plane) in [&self.u, &self.v].into_iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for row in plane.rows() {
                for (j, val) in row.iter().enumerate() {
                    if j > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{val}");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Anything producing a dense flow field between two equally sized frames.
pub trait DenseFlow {
    fn flow(&self, prev: &Frame, next: &Frame) -> Result<FlowField>;
}

/// Horn–Schunck: brightness constancy plus a quadratic smoothness penalty
/// weighted by `alpha^2`, solved by a fixed number of Jacobi sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HornSchunck {
    pub alpha: f64,
    pub iterations: usize,
}

impl Default for HornSchunck {
    fn default() -> Self {
        HornSchunck {
            alpha: 10.0,
            iterations: 100,
        }
    }
}

impl DenseFlow for HornSchunck {
    fn flow(&self, prev: &Frame, next: &Frame) -> Result<FlowField> {
        if (prev.width, prev.height) != (next.width, next.height) {
            return Err(Error::shape(
                "dense_flow",
                format!("{}x{}", prev.width, prev.height),
                format!("{}x{}", next.width, next.height),
            ));
        }
        let (w, h) = (prev.width, prev.height);
        if w == 0 || h == 0 {
            return Err(Error::invalid("dense flow on a zero-area frame"));
        }
        let at = |f: &Frame, x: isize, y: isize| f.get(clamp_index(x, w), clamp_index(y, h)) as f64;

        // Central spatial differences averaged over both frames.
        let mut ix = Array2::<f64>::zeros((h, w));
        let mut iy = Array2::<f64>::zeros((h, w));
        let mut it = Array2::<f64>::zeros((h, w));
        for y in 0..h as isize {
            for x in 0..w as isize {
                let gx = |f: &Frame| 0.5 * (at(f, x + 1, y) - at(f, x - 1, y));
                let gy = |f: &Frame| 0.5 * (at(f, x, y + 1) - at(f, x, y - 1));
                let (ux, uy) = (x as usize, y as usize);
                ix[[uy, ux]] = 0.5 * (gx(prev) + gx(next));
                iy[[uy, ux]] = 0.5 * (gy(prev) + gy(next));
                it[[uy, ux]] = at(next, x, y) - at(prev, x, y);
            }
        }

        let a2 = self.alpha * self.alpha;
        let mut u = Array2::<f64>::zeros((h, w));
        let mut v = Array2::<f64>::zeros((h, w));
        let mut ubar = Array2::<f64>::zeros((h, w));
        let mut vbar = Array2::<f64>::zeros((h, w));
        for _ in 0..self.iterations {
            neighbour_mean(&u, &mut ubar);
            neighbour_mean(&v, &mut vbar);
            let (us, vs) = (u.as_slice_mut().unwrap(), v.as_slice_mut().unwrap());
            let (ubs, vbs) = (ubar.as_slice().unwrap(), vbar.as_slice().unwrap());
            let (gxs, gys, gts) = (ix.as_slice().unwrap(), iy.as_slice().unwrap(), it.as_slice().unwrap());
            for i in 0..us.len() {
                let (gx, gy) = (gxs[i], gys[i]);
                let t = (gx * ubs[i] + gy * vbs[i] + gts[i]) / (a2 + gx * gx + gy * gy);
                us[i] = ubs[i] - gx * t;
                vs[i] = vbs[i] - gy * t;
            }
        }
        Ok(FlowField { u, v })
    }
}

/// Horn–Schunck Laplacian stencil: 1/6 on edge neighbours, 1/12 on corners,
/// with replicated borders.
fn neighbour_mean(src: &Array2<f64>, dst: &mut Array2<f64>) {
    let (h, w) = src.dim();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let s = |dx: isize, dy: isize| src[[clamp_index(y + dy, h), clamp_index(x + dx, w)]];
            dst[[y as usize, x as usize]] = (s(-1, 0) + s(1, 0) + s(0, -1) + s(0, 1)) / 6.0
                + (s(-1, -1) + s(1, -1) + s(-1, 1) + s(1, 1)) / 12.0;
        }
    }
}

/// Horn–Schunck with default parameters.
pub fn dense_flow(prev: &Frame, next: &Frame) -> Result<FlowField> {
    HornSchunck::default().flow(prev, next)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowStats {
    pub mean_magnitude: f64,
    pub max_magnitude: f64,
    /// Magnitude-weighted circular mean direction, radians in (-pi, pi].
    pub mean_angle: f64,
}

pub fn flow_stats(flow: &FlowField) -> FlowStats {
    let n = flow.u.len();
    if n == 0 {
        return FlowStats::default();
    }
    let mut sum_mag = 0.0;
    let mut max_mag: f64 = 0.0;
    let (mut su, mut sv) = (0.0, 0.0);
    for (&u, &v) in flow.u.iter().zip(flow.v.iter()) {
        let m = u.hypot(v);
        sum_mag += m;
        max_mag = max_mag.max(m);
        // m * (cos, sin) of the pixel direction is just (u, v)
        su += u;
        sv += v;
    }
    let mean_angle = if su == 0.0 && sv == 0.0 { 0.0 } else { sv.atan2(su) };
    FlowStats {
        mean_magnitude: sum_mag / n as f64,
        max_magnitude: max_mag,
        mean_angle,
    }
}
