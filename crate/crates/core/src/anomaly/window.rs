use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timebase::Frame;

/// z-score at which a scorer saturates to 1.
pub const DEFAULT_Z_CAP: f64 = 6.0;
/// Standard-deviation floor for pixel-intensity means (gray levels).
pub const DEFAULT_VISUAL_EPSILON: f64 = 0.5;

/// Shape of a rolling z-score: history size, std floor and saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScoreParams {
    pub capacity: usize,
    pub epsilon: f64,
    pub z_cap: f64,
}

impl ZScoreParams {
    pub fn validate(&self) -> Result<()> {
        if self.capacity < 2 {
            return Err(Error::InvalidConfig(format!(
                "rolling history needs capacity >= 2, got {}",
                self.capacity
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("std floor must be positive, got {}", self.epsilon)));
        }
        if !(self.z_cap > 0.0 && self.z_cap.is_finite()) {
            return Err(Error::InvalidConfig(format!("z cap must be positive, got {}", self.z_cap)));
        }
        Ok(())
    }
}

/// Mean and sample standard deviation (n - 1); zero std below two values.
pub fn mean_std(values: impl IntoIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().into_iter().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().into_iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.into_iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Bounded history of one scalar, scored by clamped z against itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingZ {
    params: ZScoreParams,
    history: VecDeque<f64>,
}

impl RollingZ {
    pub fn new(params: ZScoreParams) -> Result<Self> {
        params.validate()?;
        Ok(RollingZ {
            params,
            history: VecDeque::with_capacity(params.capacity),
        })
    }

    pub fn params(&self) -> ZScoreParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.history.iter().copied()
    }

    /// Absolute z of `value` against the current history, or `None` during
    /// warm-up (fewer than two values).
    pub fn z(&self, value: f64) -> Option<f64> {
        if self.history.len() < 2 {
            return None;
        }
        let (mean, std) = mean_std(self.history());
        Some((value - mean).abs() / std.max(self.params.epsilon))
    }

    /// Clamped score in [0, 1] without touching the history.
    pub fn peek(&self, value: f64) -> f64 {
        match self.z(value) {
            Some(z) if z.is_finite() => (z / self.params.z_cap).min(1.0),
            Some(_) => 1.0,
            None => 0.0,
        }
    }

    pub fn push(&mut self, value: f64) {
        if self.history.len() == self.params.capacity {
            self.history.pop_front();
        }
        self.history.push_back(value);
    }

    /// Scores `value` and then appends it.
    pub fn score(&mut self, value: f64) -> f64 {
        let s = self.peek(value);
        self.push(value);
        s
    }
}

/// Rolling per-frame intensity statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StatWindow {
    means: RollingZ,
    stds: VecDeque<f64>,
}

impl StatWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        Self::with_params(ZScoreParams {
            capacity,
            epsilon: DEFAULT_VISUAL_EPSILON,
            z_cap: DEFAULT_Z_CAP,
        })
    }

    pub fn with_params(params: ZScoreParams) -> Result<Self> {
        Ok(StatWindow {
            means: RollingZ::new(params)?,
            stds: VecDeque::with_capacity(params.capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.means.params().capacity
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn means(&self) -> impl Iterator<Item = f64> + '_ {
        self.means.history()
    }

    pub fn stds(&self) -> impl Iterator<Item = f64> + '_ {
        self.stds.iter().copied()
    }

    /// Scores a frame by its mean intensity, then records it. Anomalous
    /// frames are recorded too.
    pub fn score_stats(&mut self, mean: f64, std: f64) -> f64 {
        if self.stds.len() == self.capacity() {
            self.stds.pop_front();
        }
        self.stds.push_back(std);
        self.means.score(mean)
    }
}

/// Statistical score of `frame` against `window`; appends the frame.
pub fn zscore_score(window: &mut StatWindow, frame: &Frame) -> f64 {
    window.score_stats(frame.mean(), frame.std())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timebase::Timestamp;

    fn flat(v: u8) -> Frame {
        Frame::filled(8, 8, v, Timestamp::ZERO)
    }

    #[test]
    fn warm_up_scores_zero_and_appends() {
        let mut w = StatWindow::new(4).unwrap();
        assert_eq!(zscore_score(&mut w, &flat(10)), 0.0);
        assert_eq!(zscore_score(&mut w, &flat(200)), 0.0);
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn capacity_is_respected() {
        let mut w = StatWindow::new(3).unwrap();
        for v in 0..10 {
            zscore_score(&mut w, &flat(v));
        }
        assert_eq!(w.means().collect::<Vec<_>>(), vec![7.0, 8.0, 9.0]);
        assert_eq!(w.stds().count(), 3);
        assert!(StatWindow::new(1).is_err());
    }

    #[test]
    fn equal_mean_scores_zero() {
        let mut w = StatWindow::new(8).unwrap();
        for v in [90, 110, 90, 110] {
            zscore_score(&mut w, &flat(v));
        }
        assert_eq!(zscore_score(&mut w, &flat(100)), 0.0);
    }

    #[test]
    fn constant_history_uses_floor() {
        let mut w = StatWindow::new(8).unwrap();
        for _ in 0..4 {
            zscore_score(&mut w, &flat(100));
        }
        // 6 eps away saturates only at z = 6; 3 eps away gives half
        let eps = DEFAULT_VISUAL_EPSILON;
        assert!((w.means.peek(100.0 + 3.0 * eps) - 0.5).abs() < 1e-12);
        assert_eq!(w.means.peek(100.0 + 6.0 * eps * DEFAULT_Z_CAP), 1.0);
    }
}
