
use serde::{Deserialize, Serialize};

use super::bbox::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorSource {
    /// Fast primary detector.
    Fast,
    /// Slower, more accurate supplementary detector.
    Accurate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub class_id: u32,
    pub source: DetectorSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmsConfig {
    pub confidence_threshold: f64,
    pub iou_threshold: f64,
    /// Threshold for removing duplicates between the two detectors.
    pub cross_iou_threshold: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            confidence_threshold: 0.3,
            iou_threshold: 0.5,
            cross_iou_threshold: 0.5,
        }
    }
}

pub fn filter_confidence(dets: &[Detection], floor: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.confidence >= floor).copied().collect()
}

/// Greedy suppression over `order`; a candidate is dropped when it overlaps
/// an already kept box of the same class with IoU >= `threshold`.
fn greedy_suppress(dets: &[Detection], order: &[usize], threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::with_capacity(order.len());
    for &i in order {
        let d = &dets[i];
        let clash = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) >= threshold);
        if !clash {
            kept.push(*d);
        }
    }
    kept
}

/// Class-aware greedy NMS in descending confidence (stable on ties).
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    greedy_suppress(dets, &order, iou_threshold)
}

/// Union of both detectors' outputs with cross-source duplicates removed.
///
/// The higher-confidence box of an overlapping same-class pair survives; at
/// equal confidence the accurate detector wins.
pub fn cross_detector_merge(fast: &[Detection], accurate: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let all: Vec<Detection> = fast.iter().chain(accurate).copied().collect();
    let rank = |s: DetectorSource| match s {
        DetectorSource::Accurate => 0,
        DetectorSource::Fast => 1,
    };
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| {
        all[b]
            .confidence
            .total_cmp(&all[a].confidence)
            .then_with(|| rank(all[a].source).cmp(&rank(all[b].source)))
    });
    greedy_suppress(&all, &order, iou_threshold)
}
