use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::json;

use crate::anomaly::{
    audio_anomaly_score, autoencoder_score, combine_scores, event_anomaly_score, zscore_score, AnomalyKind,
    AnomalyReport, AudioBaseline, EventScore, MethodScores, ScoreWeights, StatWindow,
};
use crate::audio_dsp::{spectral_stats, SpectralStats};
use crate::detect_track::{
    cross_detector_merge, filter_confidence, nms, scripted_detector, Detection, DetectionScript, DetectorSource,
    NmsConfig, Track, Tracker,
};
use crate::error::{Error, Result};
use crate::fusion::{build_visual_tokens, AudioToken, EnsembleEmbedding, EventLabels, StubEncoders, VisualToken};
use crate::tensor::Tensor;
use crate::timebase::{AlignedWindow, Frame};
use crate::vision_dsp::{dwt2_energy, flow_stats, nlm_denoise, DenseFlow, FlowStats, HornSchunck, NlmParams, WaveletEnergy};

use super::artifacts::persist_anomaly_artifact;
use super::config::{ClassifierConfig, DetectorsConfig, RunConfig};
use super::log::{EventKind, EventLogWriter, EventRecord};
use super::models::InferenceModels;
use super::scenario::Scenario;

pub const MOTION_LABELS: [&str; 2] = ["static", "moving"];

/// One frame and its audio window, as ingested.
#[derive(Debug, Clone)]
pub struct WindowInput {
    pub index: usize,
    pub burst: usize,
    pub frame: Frame,
    pub audio: AlignedWindow,
    pub sample_rate: u32,
    pub ingested_at: Instant,
}

impl WindowInput {
    pub fn t(&self) -> f64 {
        self.frame.timestamp.seconds()
    }
}

#[derive(Debug, Clone)]
pub struct WindowFeatures {
    pub input: WindowInput,
    pub clean: Frame,
    pub wavelet: WaveletEnergy,
    pub flow: FlowStats,
    /// Statistics of the whole, zero-padded window.
    pub audio_stats: SpectralStats,
    /// Statistics of the clip-backed part of the window only.
    pub valid_audio_stats: SpectralStats,
    pub embedding: EnsembleEmbedding,
}

#[derive(Debug, Clone)]
pub struct WindowDetections {
    pub features: WindowFeatures,
    /// Merged detections above the confidence floor.
    pub detections: Vec<Detection>,
    pub tracks: Vec<Track>,
    pub matches: usize,
}

#[derive(Debug, Clone)]
pub struct WindowTokens {
    pub detected: WindowDetections,
    pub visual: VisualToken,
    pub audio: AudioToken,
}

#[derive(Debug, Clone, Serialize)]
pub struct FusionClassification {
    pub source: &'static str,
    pub context: usize,
    pub motion: &'static str,
    pub motion_probability: f64,
    /// The basic model's motion call, for comparison.
    pub basic_motion: &'static str,
    pub event: String,
    pub event_probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifierOutput {
    pub source: &'static str,
    pub label: String,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct WindowClassified {
    pub tokens: WindowTokens,
    pub fusion: FusionClassification,
    pub classifier: ClassifierOutput,
    pub classifier_logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct WindowScored {
    pub classified: WindowClassified,
    pub report: AnomalyReport,
    pub kind: AnomalyKind,
    pub event: EventScore,
}

/// A pipeline stage: one input item in, one output item out.
pub trait Stage: Send {
    type In: Send;
    type Out: Send;
    fn process(&mut self, item: Self::In) -> Result<Self::Out>;
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

pub struct FeatureStage {
    denoise: NlmParams,
    flow: HornSchunck,
    stubs: StubEncoders,
    prev: Option<(usize, Frame)>,
}

impl FeatureStage {
    pub fn new(config: &RunConfig) -> Self {
        FeatureStage {
            denoise: config.denoise,
            flow: config.flow,
            stubs: StubEncoders::default(),
            prev: None,
        }
    }
}

impl Stage for FeatureStage {
    type In = WindowInput;
    type Out = WindowFeatures;

    fn process(&mut self, input: WindowInput) -> Result<WindowFeatures> {
        let clean = nlm_denoise(&input.frame, &self.denoise)?;
        let wavelet = dwt2_energy(&clean)?;
        // the first frame of a burst has no predecessor
        let flow = match &self.prev {
            Some((burst, prev)) if *burst == input.burst => flow_stats(&self.flow.flow(prev, &clean)?),
            _ => FlowStats::default(),
        };
        self.prev = Some((input.burst, clean.clone()));
        let audio_stats = spectral_stats(&input.audio.samples, input.sample_rate)?;
        let valid = input.audio.valid_samples();
        let valid_audio_stats = if valid.is_empty() {
            SpectralStats::default()
        } else {
            spectral_stats(valid, input.sample_rate)?
        };
        let embedding = self.stubs.embed(&input.audio.samples, input.sample_rate)?;
        Ok(WindowFeatures {
            input,
            clean,
            wavelet,
            flow,
            audio_stats,
            valid_audio_stats,
            embedding,
        })
    }
}

pub struct DetectStage {
    script: Option<DetectionScript>,
    detectors: DetectorsConfig,
    nms: NmsConfig,
    tracker: Tracker,
}

impl DetectStage {
    pub fn new(config: &RunConfig, scenario: Option<&Scenario>) -> Self {
        DetectStage {
            script: scenario.map(Scenario::detection_script),
            detectors: config.detectors,
            nms: config.detection,
            tracker: Tracker::new(config.tracker),
        }
    }

    fn detect(&self, index: usize, source: DetectorSource) -> Result<Vec<Detection>> {
        let Some(script) = self.script.as_ref().filter(|s| index < s.frame_count) else {
            return Ok(Vec::new());
        };
        let noise = match source {
            DetectorSource::Fast => &self.detectors.fast,
            DetectorSource::Accurate => &self.detectors.accurate,
        };
        Ok(nms(&scripted_detector(index, script, noise, source)?, self.nms.iou_threshold))
    }
}

impl Stage for DetectStage {
    type In = WindowFeatures;
    type Out = WindowDetections;

    fn process(&mut self, features: WindowFeatures) -> Result<WindowDetections> {
        let index = features.input.index;
        let fast = self.detect(index, DetectorSource::Fast)?;
        let accurate = self.detect(index, DetectorSource::Accurate)?;
        let merged = cross_detector_merge(&fast, &accurate, self.nms.cross_iou_threshold);
        // the tracker sees low-confidence boxes too; the log only the confident ones
        let update = self.tracker.step(&merged);
        Ok(WindowDetections {
            detections: filter_confidence(&merged, self.nms.confidence_threshold),
            tracks: update.tracks,
            matches: update.matches.len(),
            features,
        })
    }
}

pub struct TokenStage;

impl Stage for TokenStage {
    type In = WindowDetections;
    type Out = WindowTokens;

    fn process(&mut self, detected: WindowDetections) -> Result<WindowTokens> {
        let f = &detected.features;
        let visual = build_visual_tokens(std::slice::from_ref(&detected.detections), &[f.wavelet], &[f.flow])?[0];
        let audio = AudioToken::from_stats(&f.audio_stats);
        Ok(WindowTokens { detected, visual, audio })
    }
}

/// Stand-in for the per-modality event classifiers: background dominates,
/// except in windows the scenario tags with an event label.
#[derive(Debug, Clone)]
pub struct ScriptedClassifier {
    labels: EventLabels,
    config: ClassifierConfig,
    seed: u64,
    background: usize,
}

impl ScriptedClassifier {
    pub fn new(labels: EventLabels, config: ClassifierConfig, seed: u64) -> Self {
        let background = labels.id("background").unwrap_or(0);
        ScriptedClassifier {
            labels,
            config,
            seed,
            background,
        }
    }

    pub fn logits(&self, window: usize, scenario: Option<&Scenario>) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (window as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
        let noise = Normal::new(0.0, self.config.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut logits: Vec<f64> = (0..self.labels.len()).map(|_| noise.sample(&mut rng)).collect();
        logits[self.background] += self.config.background_logit;
        if let Some(label) = scenario.and_then(|s| s.event_label_at(window)) {
            let id = self
                .labels
                .id(label)
                .ok_or_else(|| Error::InvalidConfig(format!("scenario event label {label:?} is not a known event label")))?;
            logits[id] += self.config.event_logit;
        }
        Ok(logits)
    }
}

pub struct FusionStage<'a> {
    models: &'a InferenceModels,
    labels: EventLabels,
    classifier: ScriptedClassifier,
    scenario: Option<&'a Scenario>,
    max_len: usize,
    burst: Option<usize>,
    visual: Vec<VisualToken>,
    audio: Vec<AudioToken>,
}

impl<'a> FusionStage<'a> {
    pub fn new(config: &RunConfig, models: &'a InferenceModels, scenario: Option<&'a Scenario>) -> Self {
        let labels = config.fusion.labels.clone();
        FusionStage {
            models,
            classifier: ScriptedClassifier::new(labels.clone(), config.classifier, scenario.map_or(0, |s| s.seed)),
            labels,
            scenario,
            max_len: models.advanced.config().max_len,
            burst: None,
            visual: Vec::new(),
            audio: Vec::new(),
        }
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

impl Stage for FusionStage<'_> {
    type In = WindowTokens;
    type Out = WindowClassified;

    fn process(&mut self, tokens: WindowTokens) -> Result<WindowClassified> {
        let input = &tokens.detected.features.input;
        if self.burst != Some(input.burst) {
            self.burst = Some(input.burst);
            self.visual.clear();
            self.audio.clear();
        }
        if self.visual.len() == self.max_len {
            self.visual.remove(0);
            self.audio.remove(0);
        }
        self.visual.push(tokens.visual);
        self.audio.push(tokens.audio);

        let m = self.models;
        let bv: Tensor<f32> = m.basic_norm.visual_tensor(&self.visual)?;
        let ba: Tensor<f32> = m.basic_norm.audio_tensor(&self.audio)?;
        let basic = softmax(&to_f64(&m.basic.forward(&bv, &ba)?.logits));
        let av: Tensor<f32> = m.advanced_norm.visual_tensor(&self.visual)?;
        let aa: Tensor<f32> = m.advanced_norm.audio_tensor(&self.audio)?;
        let out = m
            .advanced
            .forward_with_embedding(&av, &aa, &tokens.detected.features.embedding)?;
        let motion = softmax(&to_f64(&out.motion_logits));
        let event = softmax(&to_f64(&out.event_logits));
        let (mi, ei) = (argmax(&motion), argmax(&event));
        let fusion = FusionClassification {
            source: "fusion",
            context: self.visual.len(),
            motion: MOTION_LABELS[mi.min(1)],
            motion_probability: motion[mi],
            basic_motion: MOTION_LABELS[argmax(&basic).min(1)],
            event: self.labels.name(ei).unwrap_or("?").to_string(),
            event_probability: event[ei],
        };

        let classifier_logits = self.classifier.logits(input.index, self.scenario)?;
        let p = softmax(&classifier_logits);
        let ci = argmax(&p);
        let classifier = ClassifierOutput {
            source: "classifier",
            label: self.labels.name(ci).unwrap_or("?").to_string(),
            probability: p[ci],
        };
        Ok(WindowClassified {
            tokens,
            fusion,
            classifier,
            classifier_logits,
        })
    }
}

pub struct AnomalyStage<'a> {
    stat: StatWindow,
    audio: AudioBaseline,
    autoencoder: Option<&'a crate::anomaly::DenseAutoencoder>,
    weights: ScoreWeights,
    threshold: f64,
    anomaly_ids: Vec<usize>,
    event_probability: f64,
    labels: EventLabels,
}

impl<'a> AnomalyStage<'a> {
    pub fn new(config: &RunConfig, models: &'a InferenceModels) -> Result<Self> {
        let a = &config.anomaly;
        Ok(AnomalyStage {
            stat: a.stat_window()?,
            audio: a.audio_baseline()?,
            autoencoder: models.autoencoder.as_ref(),
            weights: effective_weights(a.weights, models.autoencoder.is_some())?,
            threshold: a.threshold,
            anomaly_ids: config.fusion.labels.ids(&a.anomaly_labels)?,
            event_probability: a.event_probability,
            labels: config.fusion.labels.clone(),
        })
    }
}

/// Without an autoencoder the reconstruction weight is dropped; the rest
/// are renormalized.
pub fn effective_weights(weights: ScoreWeights, have_autoencoder: bool) -> Result<ScoreWeights> {
    let w = if have_autoencoder {
        weights
    } else {
        ScoreWeights {
            reconstruction: 0.0,
            ..weights
        }
    };
    w.normalized()
}

impl Stage for AnomalyStage<'_> {
    type In = WindowClassified;
    type Out = WindowScored;

    fn process(&mut self, c: WindowClassified) -> Result<WindowScored> {
        let f = &c.tokens.detected.features;
        let statistical = zscore_score(&mut self.stat, &f.clean);
        let reconstruction = match self.autoencoder {
            Some(ae) => autoencoder_score(ae, &f.clean)?,
            None => 0.0,
        };
        let audio = audio_anomaly_score(&f.valid_audio_stats, &mut self.audio);
        let event = event_anomaly_score(&c.classifier_logits, &self.anomaly_ids, self.event_probability)?;
        let names = event
            .labels
            .iter()
            .filter_map(|&id| self.labels.name(id).map(str::to_string))
            .collect();
        let report = combine_scores(
            MethodScores {
                statistical,
                reconstruction,
                audio,
                event: event.score,
            },
            self.weights,
            self.threshold,
            f.input.t(),
            names,
        )?;
        let kind = report.dominant_kind();
        Ok(WindowScored {
            classified: c,
            report,
            kind,
            event,
        })
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SinkCounts {
    pub windows: usize,
    pub triggered: usize,
    pub artifacts: usize,
    pub artifact_errors: usize,
    pub records: usize,
}

/// Single owner of the event log and the artifact directory.
pub struct SinkStage {
    log: EventLogWriter,
    artifacts_root: PathBuf,
    artifacts_rel: String,
    pub counts: SinkCounts,
    pub latencies_ms: Vec<f64>,
    pub processed_windows: Vec<usize>,
}

impl SinkStage {
    pub fn new(log: EventLogWriter, artifacts_root: PathBuf, artifacts_rel: impl Into<String>) -> Self {
        SinkStage {
            log,
            artifacts_root,
            artifacts_rel: artifacts_rel.into(),
            counts: SinkCounts::default(),
            latencies_ms: Vec::new(),
            processed_windows: Vec::new(),
        }
    }

    pub fn finish(self) -> Result<(PathBuf, SinkCounts, Vec<f64>, Vec<usize>)> {
        let path = self.log.finish()?;
        Ok((path, self.counts, self.latencies_ms, self.processed_windows))
    }

    fn emit(&mut self, t: f64, window: usize, kind: EventKind, payload: impl Serialize) -> Result<()> {
        self.log.append(&EventRecord::new(t, window, kind, payload)?)?;
        self.counts.records += 1;
        Ok(())
    }
}

#[derive(Serialize)]
struct TrackOut {
    track_id: u64,
    class_id: u32,
    bbox: crate::detect_track::BBox,
    confidence: f64,
    state: crate::detect_track::TrackState,
}

impl Stage for SinkStage {
    type In = WindowScored;
    type Out = ();

    fn process(&mut self, s: WindowScored) -> Result<()> {
        let c = &s.classified;
        let d = &c.tokens.detected;
        let f = &d.features;
        let input = &f.input;
        let (t, w) = (input.t(), input.index);

        self.emit(t, w, EventKind::Detection, json!({ "count": d.detections.len(), "detections": d.detections }))?;
        let tracks: Vec<TrackOut> = d
            .tracks
            .iter()
            .map(|tr| TrackOut {
                track_id: tr.track_id,
                class_id: tr.class_id,
                bbox: tr.bbox,
                confidence: tr.confidence,
                state: tr.state,
            })
            .collect();
        self.emit(t, w, EventKind::Track, json!({ "matches": d.matches, "tracks": tracks }))?;
        self.emit(t, w, EventKind::Classification, &c.fusion)?;
        self.emit(t, w, EventKind::Classification, &c.classifier)?;

        let mut artifact = None;
        if s.report.triggered {
            self.counts.triggered += 1;
            match persist_anomaly_artifact(
                &s.report,
                s.kind,
                &input.frame,
                &input.audio.samples,
                input.sample_rate,
                &self.artifacts_root,
            ) {
                Ok(p) => {
                    self.counts.artifacts += 1;
                    let name = p.dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    artifact = Some(format!("{}/{name}", self.artifacts_rel));
                }
                Err(e) => {
                    self.counts.artifact_errors += 1;
                    log::warn!("anomaly artifact at t = {t} not saved: {e}");
                }
            }
        }
        self.emit(
            t,
            w,
            EventKind::Anomaly,
            json!({
                "scores": s.report.scores,
                "weights": s.report.weights,
                "combined": s.report.combined,
                "threshold": s.report.threshold,
                "triggered": s.report.triggered,
                "kind": s.kind,
                "contributing_events": s.report.contributing_events,
                "artifact": artifact,
            }),
        )?;
        self.emit(
            t,
            w,
            EventKind::Metric,
            json!({
                "frame_mean": f.clean.mean(),
                "wavelet_detail_energy": f.wavelet.detail_energy(),
                "flow_mean_magnitude": f.flow.mean_magnitude,
                "audio_energy": f.valid_audio_stats.energy,
                "audio_centroid_hz": f.valid_audio_stats.centroid_hz,
                "audio_padding": input.audio.pad_left + input.audio.pad_right,
            }),
        )?;
        self.counts.windows += 1;
        self.processed_windows.push(w);
        self.latencies_ms.push(input.ingested_at.elapsed().as_secs_f64() * 1e3);
        Ok(())
    }
}
