use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::log::{read_event_log, EventKind, EventRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggeredWindow {
    pub window: usize,
    pub t: f64,
    pub combined: f64,
    pub kind: String,
    pub artifact: Option<String>,
}

/// What `report` prints about an event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReport {
    pub records: usize,
    pub per_kind: BTreeMap<String, usize>,
    pub windows: usize,
    pub first_t: Option<f64>,
    pub last_t: Option<f64>,
    pub triggered: Vec<TriggeredWindow>,
    pub max_combined: f64,
}

impl LogReport {
    pub fn from_records(records: &[EventRecord]) -> Self {
        let mut per_kind: BTreeMap<String, usize> = EventKind::ALL.iter().map(|k| (k.as_str().to_string(), 0)).collect();
        let mut windows = std::collections::BTreeSet::new();
        let mut triggered = Vec::new();
        let mut max_combined = 0.0f64;
        for r in records {
            *per_kind.entry(r.kind.as_str().to_string()).or_default() += 1;
            windows.insert(r.window);
            if r.kind == EventKind::Anomaly {
                let combined = r.payload["combined"].as_f64().unwrap_or(0.0);
                max_combined = max_combined.max(combined);
                if r.payload["triggered"].as_bool() == Some(true) {
                    triggered.push(TriggeredWindow {
                        window: r.window,
                        t: r.t,
                        combined,
                        kind: r.payload["kind"].as_str().unwrap_or("unknown").to_string(),
                        artifact: r.payload["artifact"].as_str().map(str::to_string),
                    });
                }
            }
        }
        LogReport {
            records: records.len(),
            per_kind,
            windows: windows.len(),
            first_t: records.first().map(|r| r.t),
            last_t: records.last().map(|r| r.t),
            triggered,
            max_combined,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_records(&read_event_log(path)?))
    }
}

/// Combined anomaly score per window, in log order.
pub fn window_scores(records: &[EventRecord]) -> Vec<(usize, f64)> {
    records
        .iter()
        .filter(|r| r.kind == EventKind::Anomaly)
        .map(|r| (r.window, r.payload["combined"].as_f64().unwrap_or(0.0)))
        .collect()
}

/// Area under the ROC curve of `(score, is_positive)` pairs, via the
/// Mann-Whitney statistic; ties count one half.
pub fn roc_auc(samples: &[(f64, bool)]) -> Result<f64> {
    if samples.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::invalid("ROC AUC needs finite scores"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pos = sorted.iter().filter(|s| s.1).count();
    let neg = sorted.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("ROC AUC needs both positive and negative samples"));
    }
    // sum of positive ranks, with tied runs sharing their average rank
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * sorted[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}
