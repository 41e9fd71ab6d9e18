//! Capture-unit data model and audio-to-frame alignment.
//!
//! A capture unit is a [`FrameBurst`] (a short run of timestamped grayscale
//! frames) plus the [`AudioClip`] recorded over the same span. Alignment cuts
//! the clip into one equal-length [`AlignedWindow`] per frame, centered on the
//! frame timestamp and zero-padded where it overhangs the clip.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds since capture start.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(f64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0.0);

    pub fn new(seconds: f64) -> Result<Self> {
        if !seconds.is_finite() || seconds < 0.0 {
            return Err(Error::invalid(format!(
                "timestamp must be finite and non-negative, got {seconds}"
            )));
        }
        Ok(Timestamp(seconds))
    }

    pub fn seconds(self) -> f64 {
        self.0
    }

    /// Whole milliseconds, rounded to nearest.
    pub fn millis(self) -> u64 {
        (self.0 * 1000.0).round() as u64
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}s", self.0)
    }
}

/// An 8-bit grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub timestamp: Timestamp,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, timestamp: Timestamp) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape(
                "Frame::new",
                format!("{} pixels ({width}x{height})", width * height),
                pixels.len(),
            ));
        }
        Ok(Frame {
            width,
            height,
            pixels,
            timestamp,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8, timestamp: Timestamp) -> Self {
        Frame {
            width,
            height,
            pixels: vec![value; width * height],
            timestamp,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        timestamp: Timestamp,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Frame {
            width,
            height,
            pixels,
            timestamp,
        }
    }

    /// Converts interleaved 8-bit RGB using ITU-R 601 luma weights.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8], timestamp: Timestamp) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::shape("Frame::from_rgb", width * height * 3, rgb.len()));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Ok(Frame {
            width,
            height,
            pixels,
            timestamp,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn std(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        let var = self
            .pixels
            .iter()
            .map(|&p| (p as f64 - m).powi(2))
            .sum::<f64>()
            / self.pixels.len() as f64;
        var.sqrt()
    }
}

/// A timestamped burst of equally-sized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBurst {
    frames: Vec<Frame>,
    nominal_fps: f64,
}

impl FrameBurst {
    /// Builds a burst, rejecting anything [`validate_burst`] would flag.
    pub fn new(frames: Vec<Frame>, nominal_fps: f64) -> Result<Self> {
        if !(nominal_fps.is_finite() && nominal_fps > 0.0) {
            return Err(Error::invalid(format!("nominal fps must be positive, got {nominal_fps}")));
        }
        let report = validate_burst(&frames);
        if !report.is_valid() {
            return Err(Error::invalid(format!("invalid frame burst: {report}")));
        }
        Ok(FrameBurst { frames, nominal_fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn nominal_fps(&self) -> f64 {
        self.nominal_fps
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }
}

/// Mono audio with a sample rate and a start time on the capture clock.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub start_time: Timestamp,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, start_time: Timestamp) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
            start_time,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// The audio slice belonging to one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedWindow {
    pub frame_index: usize,
    pub samples: Vec<f64>,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl AlignedWindow {
    /// The part of the window backed by real clip samples.
    pub fn valid_samples(&self) -> &[f64] {
        let end = self.samples.len().saturating_sub(self.pad_right);
        &self.samples[self.pad_left.min(end)..end]
    }
}

/// Cuts `clip` into one window per frame of `burst`.
///
/// Window length is `floor(clip_len / frame_count)`; the window for frame `i`
/// starts `len / 2` samples before `round((t_i - t_clip) * sample_rate)`.
/// Samples outside the clip are exact zeros. A frame whose center lies more
/// than one window length outside the clip is an alignment failure.
pub fn align_audio_to_frames(burst: &FrameBurst, clip: &AudioClip) -> Result<Vec<AlignedWindow>> {
    if burst.is_empty() {
        return Err(Error::invalid("cannot align audio to an empty burst"));
    }
    if clip.samples.is_empty() {
        return Err(Error::invalid("cannot align an empty audio clip"));
    }
    let clip_len = clip.samples.len() as i64;
    let window = clip.samples.len() / burst.len();
    if window == 0 {
        return Err(Error::invalid(format!(
            "clip of {} samples is shorter than the burst's {} frames",
            clip.samples.len(),
            burst.len()
        )));
    }
    let window_i = window as i64;
    let half = window_i / 2;
    let sr = clip.sample_rate as f64;

    burst
        .frames()
        .iter()
        .enumerate()
        .map(|(frame_index, frame)| {
            let offset_s = frame.timestamp.seconds() - clip.start_time.seconds();
            let center = (offset_s * sr).round() as i64;
            let overhang = if center < 0 {
                -center
            } else {
                (center - clip_len).max(0)
            };
            if overhang > window_i {
                return Err(Error::Alignment {
                    frame_index,
                    reason: format!(
                        "frame at {} lies {overhang} samples outside the clip, beyond one window ({window})",
                        frame.timestamp
                    ),
                });
            }

            let start = center - half;
            let end = start + window_i;
            // window <= clip_len, so the two pads never overlap
            let pad_left = (-start).clamp(0, window_i) as usize;
            let pad_right = (end - clip_len).clamp(0, window_i) as usize;
            let mut samples = vec![0.0; window];
            let valid = window - pad_left - pad_right;
            if valid > 0 {
                let from = (start + pad_left as i64) as usize;
                samples[pad_left..pad_left + valid].copy_from_slice(&clip.samples[from..from + valid]);
            }
            Ok(AlignedWindow {
                frame_index,
                samples,
                pad_left,
                pad_right,
            })
        })
        .collect()
}

/// A problem found by [`validate_burst`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BurstViolation {
    Empty,
    NonMonotoneTimestamp {
        index: usize,
        previous_s: f64,
        current_s: f64,
    },
    DimensionMismatch {
        index: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    PixelCount {
        index: usize,
        expected: usize,
        actual: usize,
    },
}

impl fmt::Display for BurstViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BurstViolation::Empty => write!(f, "burst has no frames"),
            BurstViolation::NonMonotoneTimestamp {
                index,
                previous_s,
                current_s,
            } => write!(
                f,
                "frame {index}: timestamp {current_s}s does not follow {previous_s}s"
            ),
            BurstViolation::DimensionMismatch {
                index,
                expected,
                actual,
            } => write!(
                f,
                "frame {index}: {}x{} differs from {}x{}",
                actual.0, actual.1, expected.0, expected.1
            ),
            BurstViolation::PixelCount {
                index,
                expected,
                actual,
            } => write!(f, "frame {index}: {actual} pixels, expected {expected}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<BurstViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Reports every structural problem in a frame sequence without failing.
/// Dimensions are compared against the first frame.
pub fn validate_burst(frames: &[Frame]) -> ValidationReport {
    let mut violations = Vec::new();
    let Some(first) = frames.first() else {
        violations.push(BurstViolation::Empty);
        return ValidationReport { violations };
    };
    let expected = (first.width, first.height);
    for (index, frame) in frames.iter().enumerate() {
        if frame.pixels.len() != frame.width * frame.height {
            violations.push(BurstViolation::PixelCount {
                index,
                expected: frame.width * frame.height,
                actual: frame.pixels.len(),
            });
        }
        if (frame.width, frame.height) != expected {
            violations.push(BurstViolation::DimensionMismatch {
                index,
                expected,
                actual: (frame.width, frame.height),
            });
        }
        if index > 0 {
            let prev = frames[index - 1].timestamp.seconds();
            let cur = frame.timestamp.seconds();
            if cur <= prev {
                violations.push(BurstViolation::NonMonotoneTimestamp {
                    index,
                    previous_s: prev,
                    current_s: cur,
                });
            }
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: f64) -> Timestamp {
        Timestamp::new(s).unwrap()
    }

    fn burst(n: usize, fps: f64) -> FrameBurst {
        let frames = (0..n)
            .map(|i| Frame::filled(4, 4, 0, ts(i as f64 / fps)))
            .collect();
        FrameBurst::new(frames, fps).unwrap()
    }

    /// Scalar reference: read sample `start + j` or zero.
    fn reference_window(clip: &[f64], center: i64, window: usize) -> Vec<f64> {
        let start = center - (window as i64) / 2;
        (0..window as i64)
            .map(|j| {
                let idx = start + j;
                if idx >= 0 && (idx as usize) < clip.len() {
                    clip[idx as usize]
                } else {
                    0.0
                }
            })
            .collect()
    }

    #[test]
    fn canonical_burst_gives_ten_windows_of_3200() {
        let b = burst(10, 20.0);
        let samples: Vec<f64> = (0..32000).map(|i| ((i % 97) as f64 - 48.0) / 100.0).collect();
        let clip = AudioClip::new(samples.clone(), 16_000, Timestamp::ZERO).unwrap();
        let windows = align_audio_to_frames(&b, &clip).unwrap();
        assert_eq!(windows.len(), 10);
        for (i, w) in windows.iter().enumerate() {
            assert_eq!(w.frame_index, i);
            assert_eq!(w.samples.len(), 3200);
            let center = (b.frames()[i].timestamp.seconds() * 16_000.0).round() as i64;
            assert_eq!(w.samples, reference_window(&samples, center, 3200));
        }
    }

    #[test]
    fn frame_at_clip_start_is_left_padded() {
        let b = burst(10, 20.0);
        let clip = AudioClip::new(vec![0.5; 32000], 16_000, Timestamp::ZERO).unwrap();
        let w = &align_audio_to_frames(&b, &clip).unwrap()[0];
        assert_eq!(w.pad_left, 1600);
        assert_eq!(w.pad_right, 0);
        assert!(w.samples[..1600].iter().all(|&s| s == 0.0));
        assert!(w.samples[1600..].iter().all(|&s| s == 0.5));
        assert_eq!(w.valid_samples().len(), 1600);
    }

    #[test]
    fn single_frame_takes_whole_clip() {
        let frames = vec![Frame::filled(2, 2, 0, ts(0.5))];
        let b = FrameBurst::new(frames, 1.0).unwrap();
        let samples: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let clip = AudioClip::new(samples.clone(), 1000, Timestamp::ZERO).unwrap();
        let w = &align_audio_to_frames(&b, &clip).unwrap()[0];
        assert_eq!(w.samples, samples);
        assert_eq!((w.pad_left, w.pad_right), (0, 0));
    }

    #[test]
    fn last_frame_near_clip_end_is_right_padded() {
        let frames = vec![Frame::filled(2, 2, 0, ts(0.0)), Frame::filled(2, 2, 0, ts(1.0))];
        let b = FrameBurst::new(frames, 1.0).unwrap();
        let clip = AudioClip::new(vec![1.0; 1000], 1000, Timestamp::ZERO).unwrap();
        let w = &align_audio_to_frames(&b, &clip).unwrap()[1];
        // center 1000, window 500 -> [750, 1250)
        assert_eq!(w.pad_right, 250);
        assert_eq!(w.valid_samples().len(), 250);
    }

    #[test]
    fn far_outside_frame_is_alignment_failure() {
        let frames = vec![Frame::filled(2, 2, 0, ts(0.0)), Frame::filled(2, 2, 0, ts(5.0))];
        let b = FrameBurst::new(frames, 1.0).unwrap();
        let clip = AudioClip::new(vec![0.0; 1000], 1000, Timestamp::ZERO).unwrap();
        match align_audio_to_frames(&b, &clip) {
            Err(Error::Alignment { frame_index, .. }) => assert_eq!(frame_index, 1),
            other => panic!("expected alignment failure, got {other:?}"),
        }
    }

    #[test]
    fn empty_clip_is_invalid() {
        let b = burst(2, 10.0);
        let clip = AudioClip::new(vec![], 1000, Timestamp::ZERO).unwrap();
        assert!(matches!(align_audio_to_frames(&b, &clip), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn alignment_is_deterministic() {
        let b = burst(10, 20.0);
        let samples: Vec<f64> = (0..32000).map(|i| (i as f64 * 0.37).sin()).collect();
        let clip = AudioClip::new(samples, 16_000, Timestamp::ZERO).unwrap();
        let a = align_audio_to_frames(&b, &clip).unwrap();
        let c = align_audio_to_frames(&b, &clip).unwrap();
        for (x, y) in a.iter().zip(&c) {
            let xb: Vec<u64> = x.samples.iter().map(|s| s.to_bits()).collect();
            let yb: Vec<u64> = y.samples.iter().map(|s| s.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn validate_reports() {
        let good: Vec<Frame> = (0..10).map(|i| Frame::filled(8, 8, 0, ts(i as f64 * 0.05))).collect();
        assert!(validate_burst(&good).is_valid());

        let dup = vec![Frame::filled(8, 8, 0, ts(0.1)), Frame::filled(8, 8, 0, ts(0.1))];
        let r = validate_burst(&dup);
        assert_eq!(r.violations.len(), 1);
        assert!(matches!(r.violations[0], BurstViolation::NonMonotoneTimestamp { index: 1, .. }));

        let mut mixed = good.clone();
        mixed[3] = Frame::filled(6, 8, 0, mixed[3].timestamp);
        mixed[7] = Frame::filled(8, 9, 0, mixed[7].timestamp);
        let r = validate_burst(&mixed);
        let dims: Vec<usize> = r
            .violations
            .iter()
            .filter_map(|v| match v {
                BurstViolation::DimensionMismatch { index, .. } => Some(*index),
                _ => None,
            })
            .collect();
        assert_eq!(dims, vec![3, 7]);

        assert_eq!(validate_burst(&[]).violations, vec![BurstViolation::Empty]);
    }

    #[test]
    fn rgb_uses_601_weights() {
        let f = Frame::from_rgb(2, 1, &[255, 0, 0, 0, 0, 255], Timestamp::ZERO).unwrap();
        assert_eq!(f.pixels, vec![76, 29]);
    }
}
