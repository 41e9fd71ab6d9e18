use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::bbox::BBox;
use super::nms::{Detection, DetectorSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBox {
    pub bbox: BBox,
    pub confidence: f64,
}

/// Ground-truth boxes of one object, indexed by frame; `None` = not visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptTrack {
    pub object_id: u32,
    pub class_id: u32,
    pub boxes: Vec<Option<ScriptedBox>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScript {
    pub frame_width: usize,
    pub frame_height: usize,
    pub frame_count: usize,
    pub objects: Vec<ScriptTrack>,
}

/// Perturbations applied on top of the script.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoise {
    /// Std-dev of independent Gaussian jitter on each box coordinate, px.
    pub jitter_px: f64,
    /// Std-dev of Gaussian noise added to the confidence.
    pub confidence_noise: f64,
    /// Probability each scripted box is missed.
    pub drop_probability: f64,
    /// Probability of one spurious box per frame.
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        DetectorNoise {
            jitter_px: 0.0,
            confidence_noise: 0.0,
            drop_probability: 0.0,
            false_positive_rate: 0.0,
            seed: 0,
        }
    }
}

fn frame_rng(seed: u64, frame_index: usize, source: DetectorSource) -> ChaCha8Rng {
    let tag = match source {
        DetectorSource::Fast => 0x5eed_fa57u64,
        DetectorSource::Accurate => 0x5eed_acc0u64,
    };
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((frame_index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        ^ tag;
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Stand-in detector: the script's boxes for `frame_index`, perturbed
/// deterministically from `(noise.seed, frame_index, source)`.
pub fn scripted_detector(
    frame_index: usize,
    script: &DetectionScript,
    noise: &DetectorNoise,
    source: DetectorSource,
) -> Result<Vec<Detection>> {
    if frame_index >= script.frame_count {
        return Err(Error::invalid(format!(
            "frame {frame_index} is beyond the detection script ({} frames)",
            script.frame_count
        )));
    }
    let mut rng = frame_rng(noise.seed, frame_index, source);
    let jitter = Normal::new(0.0, noise.jitter_px.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let conf_noise = Normal::new(0.0, noise.confidence_noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let (fw, fh) = (script.frame_width as f64, script.frame_height as f64);

    let mut out = Vec::new();
    for obj in &script.objects {
        let Some(Some(sb)) = obj.boxes.get(frame_index) else {
            continue;
        };
        // draw every variate unconditionally so later objects see the same stream
        let dropped = rng.random::<f64>() < noise.drop_probability;
        let d: [f64; 4] = std::array::from_fn(|_| jitter.sample(&mut rng));
        let dc = conf_noise.sample(&mut rng);
        if dropped {
            continue;
        }
        let b = &sb.bbox;
        let jittered = BBox {
            x1: b.x1 + d[0],
            y1: b.y1 + d[1],
            x2: b.x2 + d[2],
            y2: b.y2 + d[3],
        };
        let Some(bbox) = (if noise.jitter_px > 0.0 { jittered.clamp_to(fw, fh) } else { Some(*b) }) else {
            continue;
        };
        out.push(Detection {
            bbox,
            confidence: (sb.confidence + dc).clamp(0.0, 1.0),
            class_id: obj.class_id,
            source,
        });
    }

    if rng.random::<f64>() < noise.false_positive_rate && fw > 8.0 && fh > 8.0 {
        let w = rng.random_range(4.0..(fw / 4.0).max(5.0));
        let h = rng.random_range(4.0..(fh / 4.0).max(5.0));
        let x = rng.random_range(0.0..(fw - w).max(1.0));
        let y = rng.random_range(0.0..(fh - h).max(1.0));
        let class_id = script.objects.first().map_or(0, |o| o.class_id);
        if let Some(bbox) = BBox::new(x, y, x + w, y + h).ok().and_then(|b| b.clamp_to(fw, fh)) {
            out.push(Detection {
                bbox,
                confidence: rng.random_range(0.3..0.6),
                class_id,
                source,
            });
        }
    }
    Ok(out)
}
