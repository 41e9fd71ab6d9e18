use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyKind;
use crate::detect_track::{BBox, DetectionScript, ScriptTrack, ScriptedBox};
use crate::error::{Error, Result};
use crate::io::{self, Manifest, ManifestEntry};
use crate::timebase::{Frame, Timestamp};

pub const SCENARIO_FILE: &str = "scenario.json";
pub const AUDIO_FILE: &str = "audio.wav";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Background {
    pub level: f64,
    /// Peak deviation of the fixed sinusoidal texture, gray levels.
    pub texture_amplitude: f64,
    /// Std-dev of per-pixel Gaussian noise, gray levels.
    pub noise_sigma: f64,
}

impl Default for Background {
    fn default() -> Self {
        Background {
            level: 100.0,
            texture_amplitude: 20.0,
            noise_sigma: 2.0,
        }
    }
}

/// A filled rectangle moving at constant velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScript {
    pub id: u32,
    pub class_id: u32,
    /// Top-left corner at frame 0, px.
    pub start: [f64; 2],
    /// px per frame.
    #[serde(default)]
    pub velocity: [f64; 2],
    pub size: [f64; 2],
    #[serde(default = "default_intensity")]
    pub intensity: u8,
    /// Frame range `[from, to)`; the whole recording when absent.
    #[serde(default)]
    pub visible: Option<[usize; 2]>,
    /// Confidence the stand-in detectors report for this object.
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_intensity() -> u8 {
    200
}

fn default_confidence() -> f64 {
    0.9
}

impl ObjectScript {
    pub fn is_visible(&self, frame: usize) -> bool {
        self.visible.is_none_or(|[a, b]| (a..b).contains(&frame))
    }

    pub fn bbox_at(&self, frame: usize) -> BBox {
        let x = self.start[0] + self.velocity[0] * frame as f64;
        let y = self.start[1] + self.velocity[1] * frame as f64;
        BBox {
            x1: x,
            y1: y,
            x2: x + self.size[0],
            y2: y + self.size[1],
        }
    }

    pub fn is_moving(&self) -> bool {
        self.velocity != [0.0, 0.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Tone,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSegment {
    pub start_s: f64,
    pub duration_s: f64,
    pub kind: SegmentKind,
    #[serde(default)]
    pub frequency_hz: f64,
    pub amplitude: f64,
}

/// An anomaly injected over windows `[windows[0], windows[1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub windows: [usize; 2],
    pub kind: AnomalyKind,
    /// Event label tagged by `event_label` injections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Intensity offset (gray levels) or noise amplitude; kind default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
}

impl Injection {
    pub fn covers(&self, window: usize) -> bool {
        (self.windows[0]..self.windows[1]).contains(&window)
    }

    fn magnitude_or_default(&self) -> f64 {
        self.magnitude.unwrap_or(match self.kind {
            AnomalyKind::VisualBurst => 80.0,
            AnomalyKind::AudioBurst => 0.6,
            AnomalyKind::EventLabel => 0.0,
        })
    }
}

/// Scripted synthetic recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub duration_s: f64,
    pub fps: f64,
    pub sample_rate: u32,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub objects: Vec<ObjectScript>,
    #[serde(default)]
    pub audio: Vec<AudioSegment>,
    #[serde(default)]
    pub anomalies: Vec<Injection>,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    /// Two seconds at 5 fps: one burst of ten frames, one moving object and
    /// a steady tone.
    pub fn canonical(seed: u64) -> Self {
        Scenario {
            duration_s: 2.0,
            fps: 5.0,
            sample_rate: 16_000,
            width: 128,
            height: 96,
            background: Background::default(),
            objects: vec![ObjectScript {
                id: 1,
                class_id: 0,
                start: [20.0, 30.0],
                velocity: [2.0, 0.0],
                size: [24.0, 20.0],
                intensity: default_intensity(),
                visible: None,
                confidence: default_confidence(),
            }],
            audio: vec![
                AudioSegment {
                    start_s: 0.0,
                    duration_s: 2.0,
                    kind: SegmentKind::Tone,
                    frequency_hz: 440.0,
                    amplitude: 0.3,
                },
                AudioSegment {
                    start_s: 0.0,
                    duration_s: 2.0,
                    kind: SegmentKind::Noise,
                    frequency_hz: 0.0,
                    amplitude: 0.01,
                },
            ],
            anomalies: Vec::new(),
            seed,
        }
    }

    /// 24 s (120 windows) with two objects and two injections of each kind.
    pub fn injected(seed: u64) -> Self {
        let mut s = Self::normal(seed, 24.0);
        let inj = |a: usize, kind, label: Option<&str>| Injection {
            windows: [a, a + 2],
            kind,
            label: label.map(str::to_string),
            magnitude: None,
        };
        s.anomalies = vec![
            inj(20, AnomalyKind::VisualBurst, None),
            inj(35, AnomalyKind::AudioBurst, None),
            inj(50, AnomalyKind::EventLabel, Some("fire")),
            inj(72, AnomalyKind::VisualBurst, None),
            inj(88, AnomalyKind::AudioBurst, None),
            inj(104, AnomalyKind::EventLabel, Some("smoke")),
        ];
        s
    }

    /// The injected scene without injections, of arbitrary length.
    pub fn normal(seed: u64, duration_s: f64) -> Self {
        let mut s = Self::canonical(seed);
        s.duration_s = duration_s;
        for seg in &mut s.audio {
            seg.duration_s = duration_s;
        }
        // slow enough to stay inside the frame for the whole recording
        let frames = (duration_s * s.fps).round();
        s.objects[0].velocity = [60.0 / frames, 0.0];
        s.objects.push(ObjectScript {
            id: 2,
            class_id: 1,
            start: [90.0, 60.0],
            velocity: [-40.0 / frames, -20.0 / frames],
            size: [16.0, 16.0],
            intensity: 60,
            visible: None,
            confidence: 0.8,
        });
        s
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn frame_time(&self, index: usize) -> f64 {
        index as f64 / self.fps
    }

    /// Every problem with the scenario, or `Ok` when there are none.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            errs.push(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            errs.push(format!("fps must be positive, got {}", self.fps));
        }
        if self.sample_rate == 0 {
            errs.push("sample_rate must be positive".into());
        }
        if self.width < 8 || self.height < 8 {
            errs.push(format!("frames must be at least 8x8, got {}x{}", self.width, self.height));
        }
        if !errs.is_empty() {
            return Err(Error::InvalidConfig(errs.join("; ")));
        }
        let frames = self.frame_count();
        if frames == 0 {
            errs.push("scenario has no frames".into());
        }
        let eps = 0.5 / self.sample_rate as f64;
        for o in &self.objects {
            if o.size[0] <= 0.0 || o.size[1] <= 0.0 {
                errs.push(format!("object {} has non-positive size", o.id));
            }
            if let Some([a, b]) = o.visible {
                if a >= b || b > frames {
                    errs.push(format!("object {} visibility [{a}, {b}) is outside the {frames} frames", o.id));
                }
            }
        }
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            errs.push("object ids must be unique".into());
        }
        for (i, a) in self.audio.iter().enumerate() {
            if a.start_s < 0.0 || a.duration_s <= 0.0 || a.start_s + a.duration_s > self.duration_s + eps {
                errs.push(format!(
                    "audio segment {i} [{}, {}) s lies outside the {} s recording",
                    a.start_s,
                    a.start_s + a.duration_s,
                    self.duration_s
                ));
            }
            if !(a.amplitude.is_finite() && a.amplitude >= 0.0) {
                errs.push(format!("audio segment {i} has invalid amplitude {}", a.amplitude));
            }
        }
        for (i, inj) in self.anomalies.iter().enumerate() {
            let [a, b] = inj.windows;
            if a >= b || b > frames {
                errs.push(format!("injection {i} windows [{a}, {b}) lie outside the {frames} windows"));
            }
            if inj.kind == AnomalyKind::EventLabel && inj.label.is_none() {
                errs.push(format!("event_label injection {i} has no label"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs.join("; ")))
        }
    }

    pub fn injections_at(&self, window: usize) -> impl Iterator<Item = &Injection> {
        self.anomalies.iter().filter(move |i| i.covers(window))
    }

    pub fn is_anomalous(&self, window: usize) -> bool {
        self.injections_at(window).next().is_some()
    }

    pub fn event_label_at(&self, window: usize) -> Option<&str> {
        self.injections_at(window)
            .find(|i| i.kind == AnomalyKind::EventLabel)
            .and_then(|i| i.label.as_deref())
    }

    /// 1 when any visible object moves in this frame.
    pub fn motion_label(&self, frame: usize) -> usize {
        self.objects.iter().any(|o| o.is_visible(frame) && o.is_moving()) as usize
    }

    /// Ground-truth boxes for the stand-in detectors.
    pub fn detection_script(&self) -> DetectionScript {
        let (w, h) = (self.width as f64, self.height as f64);
        let n = self.frame_count();
        DetectionScript {
            frame_width: self.width,
            frame_height: self.height,
            frame_count: n,
            objects: self
                .objects
                .iter()
                .map(|o| ScriptTrack {
                    object_id: o.id,
                    class_id: o.class_id,
                    boxes: (0..n)
                        .map(|f| {
                            o.is_visible(f).then(|| o.bbox_at(f).clamp_to(w, h)).flatten().map(|bbox| ScriptedBox {
                                bbox,
                                confidence: o.confidence,
                            })
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn rng(&self, stream: u64, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(
            self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ index,
        )
    }

    pub fn render_frame(&self, index: usize) -> Result<Frame> {
        let bg = self.background;
        let noise = Normal::new(0.0, bg.noise_sigma.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut rng = self.rng(1, index as u64);
        let mut px: Vec<f64> = (0..self.height)
            .flat_map(|y| {
                (0..self.width).map(move |x| {
                    bg.level + bg.texture_amplitude * 0.5 * ((x as f64 * 0.31).sin() + (y as f64 * 0.23).cos())
                })
            })
            .collect();
        for o in self.objects.iter().filter(|o| o.is_visible(index)) {
            let b = o.bbox_at(index);
            let x0 = b.x1.round().max(0.0) as usize;
            let y0 = b.y1.round().max(0.0) as usize;
            let x1 = (b.x2.round().max(0.0) as usize).min(self.width);
            let y1 = (b.y2.round().max(0.0) as usize).min(self.height);
            for y in y0..y1 {
                px[y * self.width + x0.min(x1)..y * self.width + x1].fill(o.intensity as f64);
            }
        }
        let burst: f64 = self
            .injections_at(index)
            .filter(|i| i.kind == AnomalyKind::VisualBurst)
            .map(Injection::magnitude_or_default)
            .sum();
        let pixels = px
            .into_iter()
            .map(|v| (v + burst + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
            .collect();
        Frame::new(self.width, self.height, pixels, Timestamp::new(self.frame_time(index))?)
    }

    /// Mono audio for the whole recording, already on the 16-bit grid.
    pub fn render_audio(&self) -> Vec<f64> {
        let n = self.sample_count();
        let sr = self.sample_rate as f64;
        let mut out = vec![0.0; n];
        let span = |start_s: f64, dur_s: f64| {
            let a = ((start_s * sr).round().max(0.0) as usize).min(n);
            let b = (((start_s + dur_s) * sr).round().max(0.0) as usize).min(n);
            a..b
        };
        for (k, seg) in self.audio.iter().enumerate() {
            let mut rng = self.rng(2, k as u64);
            for i in span(seg.start_s, seg.duration_s) {
                out[i] += match seg.kind {
                    SegmentKind::Tone => seg.amplitude * (TAU * seg.frequency_hz * i as f64 / sr).sin(),
                    SegmentKind::Noise => seg.amplitude * rng.random_range(-1.0..1.0),
                };
            }
        }
        let window_s = 1.0 / self.fps;
        for (k, inj) in self.anomalies.iter().enumerate() {
            if inj.kind != AnomalyKind::AudioBurst {
                continue;
            }
            let mut rng = self.rng(3, k as u64);
            let amp = inj.magnitude_or_default();
            let start = self.frame_time(inj.windows[0]) - window_s / 2.0;
            let end = self.frame_time(inj.windows[1]) - window_s / 2.0;
            for i in span(start.max(0.0), end - start.max(0.0)) {
                out[i] += amp * rng.random_range(-1.0..1.0);
            }
        }
        io::snap_to_i16_grid(&out)
    }
}

/// Paths written by [`generate_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScenario {
    pub dir: PathBuf,
    pub frames: Vec<PathBuf>,
    pub audio: PathBuf,
    pub manifest: PathBuf,
    pub scenario: PathBuf,
}

/// Renders `scenario` into `dir`: PGM frames, a WAV track, the manifest and
/// the scenario itself.
pub fn generate_scenario(scenario: &Scenario, dir: impl AsRef<Path>) -> Result<GeneratedScenario> {
    scenario.validate()?;
    let dir = dir.as_ref();
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    let mut entries = Vec::with_capacity(scenario.frame_count());
    let mut frames = Vec::with_capacity(scenario.frame_count());
    for i in 0..scenario.frame_count() {
        let frame = scenario.render_frame(i)?;
        let rel = format!("{FRAMES_DIR}/frame_{i:05}.pgm");
        let path = dir.join(&rel);
        io::write_pgm(&path, &frame)?;
        entries.push(ManifestEntry {
            file: rel,
            timestamp_s: frame.timestamp.seconds(),
        });
        frames.push(path);
    }
    let audio = dir.join(AUDIO_FILE);
    io::write_wav(&audio, &scenario.render_audio(), scenario.sample_rate)?;
    let manifest = Manifest {
        frames: entries,
        nominal_fps: Some(scenario.fps),
        audio: Some(AUDIO_FILE.into()),
    }
    .write(dir)?;
    let scenario_path = dir.join(SCENARIO_FILE);
    fs::write(&scenario_path, serde_json::to_string_pretty(scenario)?).map_err(|e| Error::io(&scenario_path, e))?;
    Ok(GeneratedScenario {
        dir: dir.to_path_buf(),
        frames,
        audio,
        manifest,
        scenario: scenario_path,
    })
}

pub fn read_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let s: Scenario = serde_json::from_str(&text)?;
    s.validate()?;
    Ok(s)
}
