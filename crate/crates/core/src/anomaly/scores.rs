use serde::{Deserialize, Serialize};

use crate::audio_dsp::SpectralStats;
use crate::error::{Error, Result};

use super::window::{RollingZ, ZScoreParams, DEFAULT_Z_CAP};

/// Std floor for mean-square energy of samples in [-1, 1].
pub const DEFAULT_ENERGY_EPSILON: f64 = 1e-4;
/// Std floor for the spectral centroid, in Hz.
pub const DEFAULT_CENTROID_EPSILON: f64 = 25.0;

/// Rolling energy and centroid histories for the audio scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBaseline {
    energy: RollingZ,
    centroid: RollingZ,
}

impl AudioBaseline {
    pub fn new(capacity: usize) -> Result<Self> {
        Self::with_floors(capacity, DEFAULT_ENERGY_EPSILON, DEFAULT_CENTROID_EPSILON, DEFAULT_Z_CAP)
    }

    pub fn with_floors(capacity: usize, energy_epsilon: f64, centroid_epsilon: f64, z_cap: f64) -> Result<Self> {
        let p = |epsilon| ZScoreParams {
            capacity,
            epsilon,
            z_cap,
        };
        Ok(AudioBaseline {
            energy: RollingZ::new(p(energy_epsilon))?,
            centroid: RollingZ::new(p(centroid_epsilon))?,
        })
    }

    pub fn len(&self) -> usize {
        self.energy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energy.is_empty()
    }

    pub fn energy(&self) -> &RollingZ {
        &self.energy
    }

    pub fn centroid(&self) -> &RollingZ {
        &self.centroid
    }
}

/// Larger of the clamped energy and centroid z-scores; appends both values.
pub fn audio_anomaly_score(stats: &SpectralStats, baseline: &mut AudioBaseline) -> f64 {
    let e = baseline.energy.score(stats.energy);
    let c = baseline.centroid.score(stats.centroid_hz);
    e.max(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventScore {
    pub score: f64,
    /// Anomaly class ids whose probability exceeds the threshold, by id.
    pub labels: Vec<usize>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Highest softmax probability among `anomaly_ids`, plus the ids above
/// `threshold`.
pub fn event_anomaly_score(logits: &[f64], anomaly_ids: &[usize], threshold: f64) -> Result<EventScore> {
    if let Some(&bad) = anomaly_ids.iter().find(|&&id| id >= logits.len()) {
        return Err(Error::invalid(format!(
            "anomaly label id {bad} outside the {} event classes",
            logits.len()
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("event logits must be finite"));
    }
    if anomaly_ids.is_empty() {
        return Ok(EventScore {
            score: 0.0,
            labels: Vec::new(),
        });
    }
    let p = softmax(logits);
    let score = anomaly_ids.iter().map(|&id| p[id]).fold(0.0, f64::max);
    let mut labels: Vec<usize> = anomaly_ids.iter().copied().filter(|&id| p[id] > threshold).collect();
    labels.sort_unstable();
    labels.dedup();
    Ok(EventScore {
        score: score.clamp(0.0, 1.0),
        labels,
    })
}

/// Scores from the four detectors, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodScores {
    pub statistical: f64,
    pub reconstruction: f64,
    pub audio: f64,
    pub event: f64,
}

impl MethodScores {
    pub fn as_array(&self) -> [f64; 4] {
        [self.statistical, self.reconstruction, self.audio, self.event]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub statistical: f64,
    pub reconstruction: f64,
    pub audio: f64,
    pub event: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            statistical: 0.25,
            reconstruction: 0.25,
            audio: 0.25,
            event: 0.25,
        }
    }
}

impl ScoreWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.statistical, self.reconstruction, self.audio, self.event]
    }

    /// Weights rescaled to sum to 1.
    pub fn normalized(&self) -> Result<ScoreWeights> {
        let w = self.as_array();
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidConfig(format!("score weights must be finite and non-negative, got {bad}")));
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidConfig("at least one score weight must be positive".into()));
        }
        Ok(ScoreWeights {
            statistical: w[0] / total,
            reconstruction: w[1] / total,
            audio: w[2] / total,
            event: w[3] / total,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    VisualBurst,
    AudioBurst,
    EventLabel,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::VisualBurst => "visual_burst",
            AnomalyKind::AudioBurst => "audio_burst",
            AnomalyKind::EventLabel => "event_label",
        }
    }
}

impl std::fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub timestamp_s: f64,
    pub scores: MethodScores,
    /// Normalized weights the combination used.
    pub weights: ScoreWeights,
    pub combined: f64,
    pub threshold: f64,
    pub triggered: bool,
    pub contributing_events: Vec<String>,
}

impl AnomalyReport {
    /// Category of the largest weighted contribution; ties resolve in the
    /// order visual, audio, event.
    pub fn dominant_kind(&self) -> AnomalyKind {
        let w = self.weights;
        let s = self.scores;
        let visual = w.statistical * s.statistical + w.reconstruction * s.reconstruction;
        let audio = w.audio * s.audio;
        let event = w.event * s.event;
        if visual >= audio && visual >= event {
            AnomalyKind::VisualBurst
        } else if audio >= event {
            AnomalyKind::AudioBurst
        } else {
            AnomalyKind::EventLabel
        }
    }
}

/// Weighted combination of the four scores.
///
/// Scores are clamped into [0, 1] first; weights are normalized to sum to 1.
pub fn combine_scores(
    scores: MethodScores,
    weights: ScoreWeights,
    threshold: f64,
    timestamp_s: f64,
    contributing_events: Vec<String>,
) -> Result<AnomalyReport> {
    let w = weights.normalized()?;
    if !threshold.is_finite() {
        return Err(Error::InvalidConfig(format!("threshold must be finite, got {threshold}")));
    }
    if let Some(bad) = scores.as_array().iter().find(|s| s.is_nan()) {
        return Err(Error::invalid(format!("anomaly score is {bad}")));
    }
    let c = |v: f64| v.clamp(0.0, 1.0);
    let scores = MethodScores {
        statistical: c(scores.statistical),
        reconstruction: c(scores.reconstruction),
        audio: c(scores.audio),
        event: c(scores.event),
    };
    let combined = w
        .as_array()
        .iter()
        .zip(scores.as_array())
        .map(|(w, s)| w * s)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok(AnomalyReport {
        timestamp_s,
        scores,
        weights: w,
        combined,
        threshold,
        triggered: combined >= threshold,
        contributing_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(a: f64, b: f64, c: f64, d: f64) -> MethodScores {
        MethodScores {
            statistical: a,
            reconstruction: b,
            audio: c,
            event: d,
        }
    }

    #[test]
    fn combine_extremes() {
        let w = ScoreWeights::default();
        let r = combine_scores(ms(0.0, 0.0, 0.0, 0.0), w, 0.5, 0.0, vec![]).unwrap();
        assert_eq!(r.combined, 0.0);
        assert!(!r.triggered);
        let r = combine_scores(ms(1.0, 1.0, 1.0, 1.0), w, 1.0, 0.0, vec![]).unwrap();
        assert!((r.combined - 1.0).abs() < 1e-15);
        assert!(r.triggered);
    }

    #[test]
    fn zero_weights_are_config_errors() {
        let zero = ScoreWeights {
            statistical: 0.0,
            reconstruction: 0.0,
            audio: 0.0,
            event: 0.0,
        };
        assert!(matches!(
            combine_scores(ms(1.0, 0.0, 0.0, 0.0), zero, 0.5, 0.0, vec![]),
            Err(Error::InvalidConfig(_))
        ));
        let neg = ScoreWeights {
            audio: -1.0,
            ..ScoreWeights::default()
        };
        assert!(neg.normalized().is_err());
    }

    #[test]
    fn dominant_kind_follows_largest_contribution() {
        let w = ScoreWeights::default();
        let r = combine_scores(ms(0.1, 0.1, 0.9, 0.0), w, 0.5, 0.0, vec![]).unwrap();
        assert_eq!(r.dominant_kind(), AnomalyKind::AudioBurst);
        let r = combine_scores(ms(0.0, 0.0, 0.0, 0.8), w, 0.5, 0.0, vec![]).unwrap();
        assert_eq!(r.dominant_kind(), AnomalyKind::EventLabel);
        let r = combine_scores(ms(0.5, 0.5, 0.9, 0.0), w, 0.5, 0.0, vec![]).unwrap();
        assert_eq!(r.dominant_kind(), AnomalyKind::VisualBurst);
    }

    #[test]
    fn event_ids_are_checked() {
        assert!(event_anomaly_score(&[0.0; 4], &[4], 0.5).is_err());
        let r = event_anomaly_score(&[0.0; 4], &[], 0.5).unwrap();
        assert_eq!(r.score, 0.0);
        assert!(r.labels.is_empty());
    }
}
