//! Statistical, reconstruction, audio and event anomaly scorers and their
//! weighted combination.

mod autoencoder;
mod scores;
mod window;

use serde::{Deserialize, Serialize};

pub use autoencoder::{
    autoencoder_score, autoencoder_train, thumbnail, AutoencoderConfig, DenseAutoencoder, CODE_DIM, MIN_MSE_CAP,
    MIN_TRAINING_FRAMES, THUMB_LEN, THUMB_SIDE,
};
pub use scores::{
    audio_anomaly_score, combine_scores, event_anomaly_score, AnomalyKind, AnomalyReport, AudioBaseline, EventScore,
    MethodScores, ScoreWeights, DEFAULT_CENTROID_EPSILON, DEFAULT_ENERGY_EPSILON,
};
pub use window::{
    mean_std, zscore_score, RollingZ, StatWindow, ZScoreParams, DEFAULT_VISUAL_EPSILON, DEFAULT_Z_CAP,
};

use crate::error::Result;
use crate::fusion::DEFAULT_ANOMALY_LABELS;

/// Scorer settings as they appear in the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyConfig {
    pub weights: ScoreWeights,
    pub threshold: f64,
    pub history: usize,
    pub z_cap: f64,
    pub visual_epsilon: f64,
    pub energy_epsilon: f64,
    pub centroid_epsilon: f64,
    /// Event labels treated as anomalies.
    pub anomaly_labels: Vec<String>,
    /// Probability above which an anomaly label is reported.
    pub event_probability: f64,
    pub autoencoder: AutoencoderConfig,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            weights: ScoreWeights::default(),
            threshold: 0.5,
            history: 30,
            z_cap: DEFAULT_Z_CAP,
            visual_epsilon: DEFAULT_VISUAL_EPSILON,
            energy_epsilon: DEFAULT_ENERGY_EPSILON,
            centroid_epsilon: DEFAULT_CENTROID_EPSILON,
            anomaly_labels: DEFAULT_ANOMALY_LABELS.iter().map(|s| s.to_string()).collect(),
            event_probability: 0.5,
            autoencoder: AutoencoderConfig::default(),
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.normalized()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(crate::Error::InvalidConfig(format!(
                "anomaly threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.event_probability) {
            return Err(crate::Error::InvalidConfig(format!(
                "event probability threshold must lie in [0, 1], got {}",
                self.event_probability
            )));
        }
        self.stat_window()?;
        self.audio_baseline()?;
        Ok(())
    }

    pub fn stat_window(&self) -> Result<StatWindow> {
        StatWindow::with_params(ZScoreParams {
            capacity: self.history,
            epsilon: self.visual_epsilon,
            z_cap: self.z_cap,
        })
    }

    pub fn audio_baseline(&self) -> Result<AudioBaseline> {
        AudioBaseline::with_floors(self.history, self.energy_epsilon, self.centroid_epsilon, self.z_cap)
    }
}
