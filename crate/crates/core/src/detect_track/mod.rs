//! Detection data model, IoU and non-maximum suppression, cross-detector
//! merging, scripted stand-in detectors and two-stage track association.

mod bbox;
mod nms;
mod scripted;
mod tracker;

pub use bbox::{iou, BBox};
pub use nms::{cross_detector_merge, filter_confidence, nms, Detection, DetectorSource, NmsConfig};
pub use scripted::{scripted_detector, DetectionScript, DetectorNoise, ScriptTrack, ScriptedBox};
pub use tracker::{Track, TrackId, TrackState, Tracker, TrackerConfig, TrackerUpdate};
