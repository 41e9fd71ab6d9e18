use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyConfig;
use crate::detect_track::{DetectorNoise, NmsConfig, TrackerConfig};
use crate::error::{Error, Result};
use crate::fusion::{AdvancedConfig, BasicConfig, EventLabels, TokenLayout};
use crate::vision_dsp::{HornSchunck, NlmParams};

/// Noise models of the two stand-in detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorsConfig {
    pub fast: DetectorNoise,
    pub accurate: DetectorNoise,
}

impl Default for DetectorsConfig {
    fn default() -> Self {
        DetectorsConfig {
            fast: DetectorNoise {
                jitter_px: 1.5,
                confidence_noise: 0.08,
                drop_probability: 0.05,
                false_positive_rate: 0.05,
                seed: 11,
            },
            accurate: DetectorNoise {
                jitter_px: 0.5,
                confidence_noise: 0.03,
                drop_probability: 0.15,
                false_positive_rate: 0.0,
                seed: 12,
            },
        }
    }
}

/// Logit levels of the scripted event classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub background_logit: f64,
    pub event_logit: f64,
    /// Std-dev of Gaussian noise on every logit.
    pub noise: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            background_logit: 4.0,
            event_logit: 9.0,
            noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSettings {
    pub basic: BasicConfig,
    pub advanced: AdvancedConfig,
    pub labels: EventLabels,
    pub model_seed: u64,
    /// Gradient steps per model in `train`.
    pub train_steps: usize,
    pub learning_rate: f64,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings {
            basic: BasicConfig::default(),
            advanced: AdvancedConfig::default(),
            labels: EventLabels::default(),
            model_seed: 0,
            train_steps: 100,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Ingest,
    Features,
    Detect,
    Tokens,
    Fusion,
    Anomaly,
    Sink,
}

impl StageName {
    pub const ALL: [StageName; 7] = [
        StageName::Ingest,
        StageName::Features,
        StageName::Detect,
        StageName::Tokens,
        StageName::Fusion,
        StageName::Anomaly,
        StageName::Sink,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::Features => "features",
            StageName::Detect => "detect",
            StageName::Tokens => "tokens",
            StageName::Fusion => "fusion",
            StageName::Anomaly => "anomaly",
            StageName::Sink => "sink",
        }
    }
}

/// Test hook: sleep inside one stage for every item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowStage {
    pub stage: StageName,
    pub delay_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub queue_capacity: usize,
    /// Frames per capture burst; audio is aligned burst by burst.
    pub burst_frames: usize,
    /// One worker thread per stage; `false` runs every stage inline.
    pub threaded: bool,
    /// Unbounded queues, so nothing is ever dropped.
    pub deterministic: bool,
    pub slow_stage: Option<SlowStage>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            queue_capacity: 8,
            burst_frames: 10,
            threaded: true,
            deterministic: false,
            slow_stage: None,
        }
    }
}

impl PipelineSettings {
    pub fn effective_capacity(&self) -> usize {
        if self.deterministic {
            usize::MAX
        } else {
            self.queue_capacity
        }
    }
}

/// The whole run configuration, as one JSON document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub denoise: NlmParams,
    pub flow: HornSchunck,
    pub detection: NmsConfig,
    pub detectors: DetectorsConfig,
    pub tracker: TrackerConfig,
    pub fusion: FusionSettings,
    pub classifier: ClassifierConfig,
    pub anomaly: AnomalyConfig,
    pub pipeline: PipelineSettings,
}

fn unit(errs: &mut Vec<String>, name: &str, v: f64) {
    if !(0.0..=1.0).contains(&v) {
        errs.push(format!("{name} must lie in [0, 1], got {v}"));
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Collects every configuration problem into one error.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.denoise.h <= 0.0 || !self.denoise.h.is_finite() {
            errs.push(format!("denoise.h must be positive, got {}", self.denoise.h));
        }
        if !(self.flow.alpha > 0.0 && self.flow.alpha.is_finite()) {
            errs.push(format!("flow.alpha must be positive, got {}", self.flow.alpha));
        }
        let d = &self.detection;
        unit(&mut errs, "detection.confidence_threshold", d.confidence_threshold);
        unit(&mut errs, "detection.iou_threshold", d.iou_threshold);
        unit(&mut errs, "detection.cross_iou_threshold", d.cross_iou_threshold);
        for (name, n) in [("fast", &self.detectors.fast), ("accurate", &self.detectors.accurate)] {
            unit(&mut errs, &format!("detectors.{name}.drop_probability"), n.drop_probability);
            unit(&mut errs, &format!("detectors.{name}.false_positive_rate"), n.false_positive_rate);
            if n.jitter_px < 0.0 || n.confidence_noise < 0.0 {
                errs.push(format!("detectors.{name} noise levels must be non-negative"));
            }
        }
        let t = &self.tracker;
        unit(&mut errs, "tracker.high_threshold", t.high_threshold);
        unit(&mut errs, "tracker.low_threshold", t.low_threshold);
        unit(&mut errs, "tracker.match_iou", t.match_iou);
        if t.low_threshold > t.high_threshold {
            errs.push("tracker.low_threshold exceeds tracker.high_threshold".into());
        }

        let f = &self.fusion;
        if let Err(e) = EventLabels::new(f.labels.as_slice().to_vec()) {
            errs.push(format!("fusion.labels: {e}"));
        }
        let b = &f.basic;
        if b.hidden == 0 || b.heads == 0 || !b.hidden.is_multiple_of(b.heads) {
            errs.push(format!("fusion.basic.hidden ({}) must be a positive multiple of heads ({})", b.hidden, b.heads));
        }
        if (b.visual_dim, b.audio_dim) != (TokenLayout::Basic.visual_dim(), TokenLayout::Basic.audio_dim()) {
            errs.push(format!(
                "fusion.basic token dims must be {} visual / {} audio",
                TokenLayout::Basic.visual_dim(),
                TokenLayout::Basic.audio_dim()
            ));
        }
        let a = &f.advanced;
        if a.hidden == 0 || a.heads == 0 || !a.hidden.is_multiple_of(a.heads) {
            errs.push(format!("fusion.advanced.hidden ({}) must be a positive multiple of heads ({})", a.hidden, a.heads));
        }
        if (a.visual_dim, a.audio_dim) != (TokenLayout::Advanced.visual_dim(), TokenLayout::Advanced.audio_dim()) {
            errs.push(format!(
                "fusion.advanced token dims must be {} visual / {} audio",
                TokenLayout::Advanced.visual_dim(),
                TokenLayout::Advanced.audio_dim()
            ));
        }
        if a.event_classes != f.labels.len() {
            errs.push(format!(
                "fusion.advanced.event_classes ({}) differs from the {} event labels",
                a.event_classes,
                f.labels.len()
            ));
        }
        if a.motion_classes != 2 || b.classes != 2 {
            errs.push("fusion motion heads must have 2 classes (static, moving)".into());
        }
        if a.max_len < self.pipeline.burst_frames {
            errs.push(format!(
                "fusion.advanced.max_len ({}) is shorter than a burst ({} frames)",
                a.max_len, self.pipeline.burst_frames
            ));
        }
        if !(f.learning_rate.is_finite() && f.learning_rate >= 0.0) {
            errs.push(format!("fusion.learning_rate must be non-negative, got {}", f.learning_rate));
        }

        if self.classifier.noise < 0.0 || !self.classifier.noise.is_finite() {
            errs.push("classifier.noise must be non-negative".into());
        }
        if let Err(e) = self.anomaly.validate() {
            errs.push(format!("anomaly: {e}"));
        }
        if let Err(e) = f.labels.ids(&self.anomaly.anomaly_labels) {
            errs.push(format!("anomaly.anomaly_labels: {e}"));
        }
        if self.pipeline.queue_capacity == 0 {
            errs.push("pipeline.queue_capacity must be at least 1".into());
        }
        if self.pipeline.burst_frames == 0 {
            errs.push("pipeline.burst_frames must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs.join("; ")))
        }
    }
}
