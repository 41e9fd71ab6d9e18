use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anomaly::autoencoder_train;
use crate::error::{Error, Result};
use crate::fusion::{train_step_with, FusionExample, Sgd, TokenLayout, TokenNorm, Trainable};
use crate::timebase::Frame;

use super::config::RunConfig;
use super::models::ModelBundle;
use super::run::RunInputs;
use super::stages::{DetectStage, FeatureStage, Stage, TokenStage, WindowInput, WindowTokens};

/// Minimum number of clean frames before an autoencoder is fitted.
pub const MIN_AUTOENCODER_FRAMES: usize = 32;
const BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub windows: usize,
    pub examples: usize,
    pub basic_loss: Vec<f64>,
    pub advanced_loss: Vec<f64>,
    /// Frames the autoencoder was fitted on; 0 when none was trained.
    pub autoencoder_frames: usize,
    pub autoencoder_mse: Option<f64>,
}

struct Labeled {
    tokens: WindowTokens,
    motion: usize,
    event: usize,
    anomalous: bool,
}

fn extract(config: &RunConfig, inputs: &RunInputs) -> Result<Vec<Labeled>> {
    let scenario = inputs
        .scenario
        .as_ref()
        .ok_or_else(|| Error::invalid("training needs the scenario.json that describes the recording"))?;
    let labels = &config.fusion.labels;
    let background = labels.id("background").unwrap_or(0);
    let mut features = FeatureStage::new(config);
    let mut detect = DetectStage::new(config, Some(scenario));
    let mut token = TokenStage;
    let sr = inputs.audio.sample_rate;
    let mut out = Vec::new();
    for (burst, frame, audio) in inputs.windows(config.pipeline.burst_frames)? {
        let index = audio.frame_index;
        let input = WindowInput {
            index,
            burst,
            frame,
            audio,
            sample_rate: sr,
            ingested_at: std::time::Instant::now(),
        };
        let tokens = token.process(detect.process(features.process(input)?)?)?;
        let event = match scenario.event_label_at(index) {
            Some(l) => labels
                .id(l)
                .ok_or_else(|| Error::InvalidConfig(format!("scenario event label {l:?} is not a known event label")))?,
            None => background,
        };
        out.push(Labeled {
            tokens,
            motion: scenario.motion_label(index),
            event,
            anomalous: scenario.is_anomalous(index),
        });
    }
    Ok(out)
}

/// One example per window: the tokens of its burst up to and including it.
fn examples(windows: &[Labeled], norm: &TokenNorm, max_len: usize) -> Result<Vec<FusionExample>> {
    let mut out = Vec::with_capacity(windows.len());
    let mut start = 0;
    for (i, w) in windows.iter().enumerate() {
        let burst = w.tokens.detected.features.input.burst;
        if windows[start].tokens.detected.features.input.burst != burst {
            start = i;
        }
        let from = start.max((i + 1).saturating_sub(max_len));
        let ctx = &windows[from..=i];
        let visual: Vec<_> = ctx.iter().map(|c| c.tokens.visual).collect();
        let audio: Vec<_> = ctx.iter().map(|c| c.tokens.audio).collect();
        out.push(FusionExample {
            visual: norm.visual_tensor(&visual)?,
            audio: norm.audio_tensor(&audio)?,
            motion: w.motion,
            event: w.event,
            ensemble: Some(w.tokens.detected.features.embedding.clone()),
        });
    }
    Ok(out)
}

fn fit<M: Trainable>(model: &mut M, data: &[FusionExample], steps: usize, lr: f64, seed: u64) -> Result<Vec<f64>> {
    let mut opt = Sgd::with_momentum(lr, 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(steps);
    let mut cursor = order.len();
    for _ in 0..steps {
        if cursor + BATCH > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + BATCH).min(order.len());
        let batch: Vec<FusionExample> = order[cursor..end].iter().map(|&i| data[i].clone()).collect();
        cursor = end;
        losses.push(train_step_with(model, &batch, &mut opt)?);
    }
    Ok(losses)
}

/// Trains the fusion models (and, given enough normal frames, the frame
/// autoencoder) on a generated recording, then saves them to `models_dir`.
pub fn train_models(
    input_dir: impl AsRef<Path>,
    models_dir: impl AsRef<Path>,
    config: &RunConfig,
) -> Result<(ModelBundle, TrainSummary)> {
    config.validate()?;
    let inputs = RunInputs::load(input_dir)?;
    let windows = extract(config, &inputs)?;
    let visual: Vec<_> = windows.iter().map(|w| w.tokens.visual).collect();
    let audio: Vec<_> = windows.iter().map(|w| w.tokens.audio).collect();

    let mut bundle = ModelBundle::untrained(config)?;
    bundle.basic_norm = TokenNorm::fit(TokenLayout::Basic, &visual, &audio)?;
    bundle.advanced_norm = TokenNorm::fit(TokenLayout::Advanced, &visual, &audio)?;

    let f = &config.fusion;
    let basic_data = examples(&windows, &bundle.basic_norm, usize::MAX)?;
    let advanced_data = examples(&windows, &bundle.advanced_norm, f.advanced.max_len)?;
    let basic_loss = fit(&mut bundle.basic, &basic_data, f.train_steps, f.learning_rate, f.model_seed)?;
    let advanced_loss = fit(&mut bundle.advanced, &advanced_data, f.train_steps, f.learning_rate, f.model_seed + 1)?;

    let normal: Vec<Frame> = windows
        .iter()
        .filter(|w| !w.anomalous)
        .map(|w| w.tokens.detected.features.clean.clone())
        .collect();
    let (autoencoder_frames, autoencoder_mse) = if normal.len() >= MIN_AUTOENCODER_FRAMES {
        let ae = autoencoder_train(&normal, &config.anomaly.autoencoder)?;
        let mse = ae.train_mse();
        bundle.autoencoder = Some(ae);
        (normal.len(), Some(mse))
    } else {
        log::warn!(
            "only {} normal frames; the reconstruction score stays disabled (needs {MIN_AUTOENCODER_FRAMES})",
            normal.len()
        );
        (0, None)
    };

    bundle.save(models_dir)?;
    let summary = TrainSummary {
        windows: windows.len(),
        examples: basic_data.len(),
        basic_loss,
        advanced_loss,
        autoencoder_frames,
        autoencoder_mse,
    };
    Ok((bundle, summary))
}
