use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::anomaly::ScoreWeights;
use crate::error::{Error, Result};
use crate::io::{self, Manifest, MANIFEST_FILE};
use crate::timebase::{align_audio_to_frames, AudioClip, Frame, FrameBurst, Timestamp};

use super::config::{RunConfig, StageName};
use super::log::EventLogWriter;
use super::models::{InferenceModels, ModelBundle};
use super::queue::{QueueStats, StageQueue};
use super::scenario::{read_scenario, Scenario, AUDIO_FILE, SCENARIO_FILE};
use super::stages::*;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ANOMALIES_DIR: &str = "anomalies";

/// Everything a run reads from a recording directory.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub frames: Vec<Frame>,
    pub audio: AudioClip,
    pub fps: f64,
    pub scenario: Option<Scenario>,
}

impl RunInputs {
    /// Loads and checks a recording directory before any processing.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.join(MANIFEST_FILE).is_file() {
            return Err(Error::invalid(format!(
                "{} has no {MANIFEST_FILE}",
                dir.display()
            )));
        }
        let manifest = Manifest::read(dir)?;
        if manifest.frames.is_empty() {
            return Err(Error::invalid(format!("{MANIFEST_FILE} lists no frames")));
        }
        let fps = manifest
            .estimated_fps()
            .ok_or_else(|| Error::invalid("cannot infer the frame rate from the manifest"))?;
        let frames = io::read_frames(dir, &manifest)?;
        let audio_path = dir.join(manifest.audio.as_deref().unwrap_or(AUDIO_FILE));
        if !audio_path.is_file() {
            return Err(Error::invalid(format!("audio track {} is missing", audio_path.display())));
        }
        let audio = io::read_wav(&audio_path)?;
        let scenario_path = dir.join(SCENARIO_FILE);
        let scenario = if scenario_path.is_file() {
            Some(read_scenario(&scenario_path)?)
        } else {
            log::warn!("{} not found; stand-in detectors and classifier see an empty scene", scenario_path.display());
            None
        };
        Ok(RunInputs {
            frames,
            audio,
            fps,
            scenario,
        })
    }

    /// Splits the recording into bursts and aligns each burst's audio.
    pub fn windows(&self, burst_frames: usize) -> Result<Vec<(usize, Frame, crate::timebase::AlignedWindow)>> {
        let sr = self.audio.sample_rate;
        let per_frame = (sr as f64 / self.fps).round() as usize;
        let mut out = Vec::with_capacity(self.frames.len());
        for (b, chunk) in self.frames.chunks(burst_frames.max(1)).enumerate() {
            let burst = FrameBurst::new(chunk.to_vec(), self.fps)?;
            let t0 = chunk[0].timestamp.seconds() - self.audio.start_time.seconds();
            let start = ((t0 * sr as f64).round().max(0.0) as usize).min(self.audio.samples.len());
            let end = (start + per_frame * chunk.len()).min(self.audio.samples.len());
            let clip = AudioClip::new(
                self.audio.samples[start..end].to_vec(),
                sr,
                Timestamp::new(self.audio.start_time.seconds() + start as f64 / sr as f64)?,
            )?;
            let aligned = align_audio_to_frames(&burst, &clip)?;
            let base = b * burst_frames;
            for ((i, frame), w) in burst.into_frames().into_iter().enumerate().zip(aligned) {
                out.push((b, frame, crate::timebase::AlignedWindow {
                    frame_index: base + i,
                    ..w
                }));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        LatencyStats {
            count: s.len(),
            p50_ms: percentile(&s, 50.0),
            p95_ms: percentile(&s, 95.0),
            max_ms: s.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: StageName,
    /// Items offered to the stage's input queue.
    pub ingested: u64,
    pub processed: u64,
    pub dropped: u64,
    pub latency: LatencyStats,
    pub queue: QueueStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub windows_total: usize,
    pub windows_processed: usize,
    pub anomalies_triggered: usize,
    pub artifacts_written: usize,
    pub artifact_errors: usize,
    pub records_written: usize,
    pub threaded: bool,
    pub deterministic: bool,
    pub queue_capacity: usize,
    pub reconstruction_enabled: bool,
    pub weights: ScoreWeights,
    pub stages: Vec<StageSummary>,
    pub end_to_end: LatencyStats,
    /// Indices of windows that reached the sink, in order.
    pub processed_windows: Vec<usize>,
    pub log: PathBuf,
}

impl RunSummary {
    pub fn total_dropped(&self) -> u64 {
        self.stages.iter().map(|s| s.dropped).sum()
    }
}

struct Timed<S> {
    stage: S,
    name: StageName,
    delay: Option<Duration>,
    latencies: Vec<f64>,
}

impl<S: Stage> Timed<S> {
    fn new(stage: S, name: StageName, config: &RunConfig) -> Self {
        let delay = config
            .pipeline
            .slow_stage
            .filter(|s| s.stage == name)
            .map(|s| Duration::from_millis(s.delay_ms));
        Timed {
            stage,
            name,
            delay,
            latencies: Vec::new(),
        }
    }

    fn run(&mut self, item: S::In) -> Result<S::Out> {
        let start = Instant::now();
        if let Some(d) = self.delay {
            thread::sleep(d);
        }
        let out = self.stage.process(item);
        self.latencies.push(start.elapsed().as_secs_f64() * 1e3);
        out
    }
}

/// Pops until the input closes, pushing results downstream. On error the
/// input is abandoned so upstream pushes are counted as drops.
fn worker<S: Stage>(
    t: &mut Timed<S>,
    input: &StageQueue<S::In>,
    output: Option<&StageQueue<S::Out>>,
    abort: &AtomicBool,
) -> Result<()> {
    let result = (|| {
        while let Some(item) = input.pop() {
            if abort.load(Ordering::Relaxed) {
                input.abandon();
                break;
            }
            let out = t.run(item)?;
            if let Some(q) = output {
                q.push(out);
            }
        }
        Ok(())
    })();
    if result.is_err() {
        abort.store(true, Ordering::Relaxed);
        input.abandon();
    }
    if let Some(q) = output {
        q.close();
    }
    result.map_err(|e: Error| {
        log::error!("stage {} failed: {e}", t.name.as_str());
        e
    })
}

/// Drains whatever `input` holds right now, without blocking.
fn pump<S: Stage>(t: &mut Timed<S>, input: &StageQueue<S::In>, output: Option<&StageQueue<S::Out>>) -> Result<()> {
    while let Some(item) = input.try_pop() {
        let out = t.run(item)?;
        if let Some(q) = output {
            q.push(out);
        }
    }
    Ok(())
}

struct Ingest;

impl Stage for Ingest {
    type In = WindowInput;
    type Out = WindowInput;
    fn process(&mut self, item: WindowInput) -> Result<WindowInput> {
        Ok(item)
    }
}

/// Runs every stage over the recording in `input_dir`, writing the event
/// log, anomaly artifacts and `summary.json` under `out_dir`.
pub fn pipeline_run(
    input_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    config: &RunConfig,
    models: Option<&ModelBundle>,
) -> Result<RunSummary> {
    config.validate()?;
    let inputs = RunInputs::load(input_dir)?;
    if let Some(s) = &inputs.scenario {
        for inj in &s.anomalies {
            if let Some(l) = &inj.label {
                config.fusion.labels.ids(&[l])?;
            }
        }
    }
    let owned;
    let models = match models {
        Some(m) => m,
        None => {
            owned = ModelBundle::untrained(config)?;
            &owned
        }
    };
    let inference = models.for_inference();
    let windows = inputs.windows(config.pipeline.burst_frames)?;

    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log = EventLogWriter::create(out_dir.join(EVENTS_FILE))?;
    let sink = SinkStage::new(log, out_dir.join(ANOMALIES_DIR), ANOMALIES_DIR);
    let summary = execute(config, &inputs, windows, &inference, sink)?;
    let path = out_dir.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

fn execute(
    config: &RunConfig,
    inputs: &RunInputs,
    windows: Vec<(usize, Frame, crate::timebase::AlignedWindow)>,
    models: &InferenceModels,
    sink: SinkStage,
) -> Result<RunSummary> {
    let cap = config.pipeline.effective_capacity();
    let total = windows.len();
    let sr = inputs.audio.sample_rate;
    let scenario = inputs.scenario.as_ref();

    let q_in = StageQueue::<WindowInput>::new(cap);
    let q_feat = StageQueue::<WindowInput>::new(cap);
    let q_det = StageQueue::<WindowFeatures>::new(cap);
    let q_tok = StageQueue::<WindowDetections>::new(cap);
    let q_fus = StageQueue::<WindowTokens>::new(cap);
    let q_ano = StageQueue::<WindowClassified>::new(cap);
    let q_sink = StageQueue::<WindowScored>::new(cap);

    let mut ingest = Timed::new(Ingest, StageName::Ingest, config);
    let mut features = Timed::new(FeatureStage::new(config), StageName::Features, config);
    let mut detect = Timed::new(DetectStage::new(config, scenario), StageName::Detect, config);
    let mut tokens = Timed::new(TokenStage, StageName::Tokens, config);
    let mut fusion = Timed::new(FusionStage::new(config, models, scenario), StageName::Fusion, config);
    let mut anomaly = Timed::new(AnomalyStage::new(config, models)?, StageName::Anomaly, config);
    let mut sink = Timed::new(sink, StageName::Sink, config);

    let make_input = |(burst, frame, audio): (usize, Frame, crate::timebase::AlignedWindow)| WindowInput {
        index: audio.frame_index,
        burst,
        frame,
        audio,
        sample_rate: sr,
        ingested_at: Instant::now(),
    };

    if config.pipeline.threaded {
        let abort = AtomicBool::new(false);
        let results: Vec<Result<()>> = thread::scope(|s| {
            let hs = vec![
                s.spawn(|| worker(&mut ingest, &q_in, Some(&q_feat), &abort)),
                s.spawn(|| worker(&mut features, &q_feat, Some(&q_det), &abort)),
                s.spawn(|| worker(&mut detect, &q_det, Some(&q_tok), &abort)),
                s.spawn(|| worker(&mut tokens, &q_tok, Some(&q_fus), &abort)),
                s.spawn(|| worker(&mut fusion, &q_fus, Some(&q_ano), &abort)),
                s.spawn(|| worker(&mut anomaly, &q_ano, Some(&q_sink), &abort)),
                s.spawn(|| worker(&mut sink, &q_sink, None, &abort)),
            ];
            // the source never waits: a full first queue drops its oldest window
            for w in windows {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                q_in.push(make_input(w));
            }
            q_in.close();
            hs.into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("pipeline stage panicked"))))
                .collect()
        });
        if let Some(e) = results.into_iter().find_map(Result::err) {
            return Err(e);
        }
    } else {
        for w in windows {
            q_in.push(make_input(w));
            pump(&mut ingest, &q_in, Some(&q_feat))?;
            pump(&mut features, &q_feat, Some(&q_det))?;
            pump(&mut detect, &q_det, Some(&q_tok))?;
            pump(&mut tokens, &q_tok, Some(&q_fus))?;
            pump(&mut fusion, &q_fus, Some(&q_ano))?;
            pump(&mut anomaly, &q_ano, Some(&q_sink))?;
            pump(&mut sink, &q_sink, None)?;
        }
        for q in [&q_in as &dyn Closable, &q_feat, &q_det, &q_tok, &q_fus, &q_ano, &q_sink] {
            q.close_queue();
        }
    }

    let stage = |name: StageName, stats: QueueStats, lat: &[f64]| StageSummary {
        stage: name,
        ingested: stats.pushed,
        processed: lat.len() as u64,
        dropped: stats.dropped,
        latency: LatencyStats::from_samples(lat),
        queue: stats,
    };
    let stages = vec![
        stage(StageName::Ingest, q_in.stats(), &ingest.latencies),
        stage(StageName::Features, q_feat.stats(), &features.latencies),
        stage(StageName::Detect, q_det.stats(), &detect.latencies),
        stage(StageName::Tokens, q_tok.stats(), &tokens.latencies),
        stage(StageName::Fusion, q_fus.stats(), &fusion.latencies),
        stage(StageName::Anomaly, q_ano.stats(), &anomaly.latencies),
        stage(StageName::Sink, q_sink.stats(), &sink.latencies),
    ];
    let weights = effective_weights(config.anomaly.weights, models.autoencoder.is_some())?;
    let (log, counts, e2e, processed_windows) = sink.stage.finish()?;
    Ok(RunSummary {
        windows_total: total,
        windows_processed: counts.windows,
        anomalies_triggered: counts.triggered,
        artifacts_written: counts.artifacts,
        artifact_errors: counts.artifact_errors,
        records_written: counts.records,
        threaded: config.pipeline.threaded,
        deterministic: config.pipeline.deterministic,
        queue_capacity: q_in.stats().capacity,
        reconstruction_enabled: models.autoencoder.is_some(),
        weights,
        stages,
        end_to_end: LatencyStats::from_samples(&e2e),
        processed_windows,
        log,
    })
}

trait Closable {
    fn close_queue(&self);
}

impl<T> Closable for StageQueue<T> {
    fn close_queue(&self) {
        self.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let s = LatencyStats::from_samples(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!((s.p50_ms, s.p95_ms, s.max_ms), (3.0, 5.0, 5.0));
        let one = LatencyStats::from_samples(&[7.0]);
        assert_eq!((one.p50_ms, one.p95_ms, one.max_ms), (7.0, 7.0, 7.0));
        assert_eq!(LatencyStats::from_samples(&[]).count, 0);
    }
}
