use serde::{Deserialize, Serialize};

use super::bbox::{iou, BBox};
use super::nms::Detection;

pub type TrackId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    Tentative,
    Active,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: TrackId,
    pub bbox: BBox,
    pub class_id: u32,
    pub confidence: f64,
    /// Steps since creation.
    pub age: u32,
    /// Consecutive unmatched steps.
    pub misses: u32,
    /// Consecutive matched steps, including the creating detection.
    pub hits: u32,
    pub state: TrackState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub high_threshold: f64,
    pub low_threshold: f64,
    pub match_iou: f64,
    pub max_misses: u32,
    pub confirm_hits: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            high_threshold: 0.5,
            low_threshold: 0.1,
            match_iou: 0.2,
            max_misses: 3,
            confirm_hits: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerUpdate {
    /// Every track alive after the step, including ones that just became lost.
    pub tracks: Vec<Track>,
    /// `(detection index, track id)` for each association made this step.
    pub matches: Vec<(usize, TrackId)>,
}

/// Two-stage IoU tracker: confident detections are associated first, then
/// leftover tracks are offered the low-confidence ones.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: TrackId,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Tracker {
            config,
            tracks: Vec::new(),
            next_id: 1,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Greedy max-IoU assignment between `track_idx` and `det_idx`, same class
    /// only, pairs below the IoU floor never match.
    fn associate(&self, track_idx: &[usize], det_idx: &[usize], dets: &[Detection]) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for &t in track_idx {
            let track = &self.tracks[t];
            for &d in det_idx {
                let det = &dets[d];
                if det.class_id != track.class_id {
                    continue;
                }
                let overlap = iou(&track.bbox, &det.bbox);
                if overlap >= self.config.match_iou {
                    pairs.push((overlap, t, d));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(self.tracks[a.1].track_id.cmp(&self.tracks[b.1].track_id))
                .then(a.2.cmp(&b.2))
        });
        let mut used_t = vec![false; self.tracks.len()];
        let mut used_d = vec![false; dets.len()];
        let mut out = Vec::new();
        for (_, t, d) in pairs {
            if !used_t[t] && !used_d[d] {
                used_t[t] = true;
                used_d[d] = true;
                out.push((t, d));
            }
        }
        out
    }

    pub fn step(&mut self, dets: &[Detection]) -> TrackerUpdate {
        let cfg = self.config;
        self.tracks.retain(|t| t.state != TrackState::Lost);
        for t in &mut self.tracks {
            t.age += 1;
        }

        let high: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].confidence >= cfg.high_threshold).collect();
        let low: Vec<usize> = (0..dets.len())
            .filter(|&i| dets[i].confidence >= cfg.low_threshold && dets[i].confidence < cfg.high_threshold)
            .collect();

        let all_tracks: Vec<usize> = (0..self.tracks.len()).collect();
        let mut assigned = self.associate(&all_tracks, &high, dets);
        let matched_tracks: Vec<bool> = {
            let mut m = vec![false; self.tracks.len()];
            for &(t, _) in &assigned {
                m[t] = true;
            }
            m
        };
        let remaining: Vec<usize> = all_tracks.iter().copied().filter(|&t| !matched_tracks[t]).collect();
        assigned.extend(self.associate(&remaining, &low, dets));

        let mut track_hit = vec![false; self.tracks.len()];
        let mut det_used = vec![false; dets.len()];
        let mut matches = Vec::with_capacity(assigned.len());
        for &(t, d) in &assigned {
            track_hit[t] = true;
            det_used[d] = true;
            let track = &mut self.tracks[t];
            track.bbox = dets[d].bbox;
            track.confidence = dets[d].confidence;
            track.misses = 0;
            track.hits += 1;
            if track.state == TrackState::Tentative && track.hits >= cfg.confirm_hits {
                track.state = TrackState::Active;
            }
            matches.push((d, track.track_id));
        }
        for (t, track) in self.tracks.iter_mut().enumerate() {
            if !track_hit[t] {
                track.misses += 1;
                track.hits = 0;
                if track.misses >= cfg.max_misses {
                    track.misses = cfg.max_misses;
                    track.state = TrackState::Lost;
                }
            }
        }

        for &d in &high {
            if det_used[d] {
                continue;
            }
            let det = &dets[d];
            let id = self.next_id;
            self.next_id += 1;
            let state = if cfg.confirm_hits <= 1 {
                TrackState::Active
            } else {
                TrackState::Tentative
            };
            self.tracks.push(Track {
                track_id: id,
                bbox: det.bbox,
                class_id: det.class_id,
                confidence: det.confidence,
                age: 0,
                misses: 0,
                hits: 1,
                state,
            });
            matches.push((d, id));
        }
        matches.sort_unstable();

        TrackerUpdate {
            tracks: self.tracks.clone(),
            matches,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect_track::DetectorSource;

    fn det(x: f64, conf: f64) -> Detection {
        Detection {
            bbox: BBox::new(x, 10.0, x + 20.0, 30.0).unwrap(),
            confidence: conf,
            class_id: 0,
            source: DetectorSource::Fast,
        }
    }

    #[test]
    fn follows_overlapping_detection() {
        let mut t = Tracker::new(TrackerConfig::default());
        let first = t.step(&[det(0.0, 0.9)]);
        let id = first.tracks[0].track_id;
        let second = t.step(&[det(3.0, 0.9)]);
        assert_eq!(second.tracks.len(), 1);
        assert_eq!(second.tracks[0].track_id, id);
        assert_eq!(second.tracks[0].bbox, det(3.0, 0.9).bbox);
        assert_eq!(second.tracks[0].state, TrackState::Active);
    }

    #[test]
    fn lost_after_max_misses() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.step(&[det(0.0, 0.9)]);
        t.step(&[det(0.0, 0.9)]);
        let mut last = None;
        for _ in 0..3 {
            last = Some(t.step(&[]));
        }
        let u = last.unwrap();
        assert_eq!(u.tracks[0].state, TrackState::Lost);
        assert_eq!(u.tracks[0].misses, 3);
        // pruned on the next step, and the id is not reused
        let u = t.step(&[det(0.0, 0.9)]);
        assert_eq!(u.tracks.len(), 1);
        assert_eq!(u.tracks[0].track_id, 2);
    }

    #[test]
    fn low_confidence_stage_rescues_dip() {
        let mut t = Tracker::new(TrackerConfig::default());
        let mut ids = Vec::new();
        for (i, conf) in [0.9, 0.9, 0.15, 0.9].into_iter().enumerate() {
            let u = t.step(&[det(2.0 * i as f64, conf)]);
            assert_eq!(u.matches.len(), 1, "step {i}");
            ids.push(u.matches[0].1);
        }
        assert!(ids.iter().all(|&id| id == ids[0]), "{ids:?}");
    }

    #[test]
    fn unmatched_low_confidence_does_not_spawn() {
        let mut t = Tracker::new(TrackerConfig::default());
        let u = t.step(&[det(0.0, 0.3)]);
        assert!(u.tracks.is_empty());
        assert!(u.matches.is_empty());
    }

    #[test]
    fn ids_unique_and_increasing() {
        let mut t = Tracker::new(TrackerConfig::default());
        let u = t.step(&[det(0.0, 0.9), det(100.0, 0.9), det(200.0, 0.8)]);
        let ids: Vec<_> = u.tracks.iter().map(|t| t.track_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }
}
