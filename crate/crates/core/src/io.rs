//! File formats at the edges: PGM (P5) frames, 16-bit PCM mono WAV and the
//! frame manifest.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timebase::{AudioClip, Frame, Timestamp};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn encode_pgm(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(frame.pixels.len() + 32);
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &frame.pixels,
            frame.width as u32,
            frame.height as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| Error::Format {
            what: "PGM",
            reason: e.to_string(),
        })?;
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8], timestamp: Timestamp) -> Result<Frame> {
    let img = image::load(Cursor::new(bytes), ImageFormat::Pnm).map_err(|e| Error::Format {
        what: "PGM",
        reason: e.to_string(),
    })?;
    let luma = img.into_luma8();
    let (w, h) = luma.dimensions();
    Frame::new(w as usize, h as usize, luma.into_raw(), timestamp)
}

pub fn write_pgm(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(frame)?).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>, timestamp: Timestamp) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, timestamp)
}

/// Maps a sample in [-1, 1] onto the signed 16-bit grid (symmetric, ±32767).
#[inline]
pub fn quantize_i16(sample: f64) -> i16 {
    (sample * 32767.0).round().clamp(-32767.0, 32767.0) as i16
}

#[inline]
pub fn dequantize_i16(value: i16) -> f64 {
    (value as f64 / 32767.0).max(-1.0)
}

/// Snaps samples to exactly what a 16-bit WAV round trip yields.
pub fn snap_to_i16_grid(samples: &[f64]) -> Vec<f64> {
    samples.iter().map(|&s| dequantize_i16(quantize_i16(s))).collect()
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format {
            what: "WAV",
            reason: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        writer.write_sample(quantize_i16(s)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format {
            what: "WAV",
            reason: other.to_string(),
        },
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format {
            what: "WAV",
            reason: format!(
                "expected 16-bit PCM mono, got {} channel(s) of {}-bit {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(dequantize_i16))
        .collect::<Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    AudioClip::new(samples, spec.sample_rate, Timestamp::ZERO)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub timestamp_s: f64,
}

/// Frame listing for a recording directory.
///
/// On disk this is either a bare array of entries or an object with a
/// `frames` array and optional `nominal_fps` / `audio` fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub frames: Vec<ManifestEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nominal_fps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
}

impl<'de> Deserialize<'de> for Manifest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Full {
            frames: Vec<ManifestEntry>,
            #[serde(default)]
            nominal_fps: Option<f64>,
            #[serde(default)]
            audio: Option<String>,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Bare(Vec<ManifestEntry>),
            Full(Full),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Bare(frames) => Manifest {
                frames,
                nominal_fps: None,
                audio: None,
            },
            Repr::Full(f) => Manifest {
                frames: f.frames,
                nominal_fps: f.nominal_fps,
                audio: f.audio,
            },
        })
    }
}

impl Manifest {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Median spacing of timestamps, inverted; falls back to `nominal_fps`.
    pub fn estimated_fps(&self) -> Option<f64> {
        if let Some(fps) = self.nominal_fps {
            return Some(fps);
        }
        let mut gaps: Vec<f64> = self
            .frames
            .windows(2)
            .map(|w| w[1].timestamp_s - w[0].timestamp_s)
            .filter(|g| *g > 0.0)
            .collect();
        if gaps.is_empty() {
            return None;
        }
        gaps.sort_by(f64::total_cmp);
        Some(1.0 / gaps[gaps.len() / 2])
    }
}

/// Loads every frame listed in the directory's manifest.
pub fn read_frames(dir: impl AsRef<Path>, manifest: &Manifest) -> Result<Vec<Frame>> {
    let dir = dir.as_ref();
    manifest
        .frames
        .iter()
        .map(|e| read_pgm(dir.join(&e.file), Timestamp::new(e.timestamp_s)?))
        .collect()
}
