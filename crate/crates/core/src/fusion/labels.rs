use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVENT_CLASSES: usize = 32;

/// Default event vocabulary: background, the industrial events the system
/// targets, then generic plant sounds to fill 32 classes.
pub const DEFAULT_EVENT_LABELS: [&str; EVENT_CLASSES] = [
    "background",
    "machine_operation",
    "tool_usage",
    "smoke",
    "fire",
    "leak",
    "structural_damage",
    "speech",
    "footsteps",
    "door",
    "alarm",
    "vehicle",
    "conveyor",
    "hammering",
    "drilling",
    "welding",
    "grinding",
    "forklift",
    "ventilation",
    "water_flow",
    "steam",
    "electrical_hum",
    "glass_break",
    "impact",
    "crowd",
    "music",
    "siren",
    "compressor",
    "pump",
    "motor_startup",
    "motor_stop",
    "metal_scrape",
];

pub const DEFAULT_ANOMALY_LABELS: [&str; 4] = ["smoke", "fire", "leak", "structural_damage"];

/// The event-class vocabulary, index = class id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventLabels(Vec<String>);

impl Default for EventLabels {
    fn default() -> Self {
        EventLabels(DEFAULT_EVENT_LABELS.iter().map(|s| s.to_string()).collect())
    }
}

impl EventLabels {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidConfig("event label set is empty".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidConfig(format!("duplicate event label {l:?}")));
            }
        }
        Ok(EventLabels(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.0.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|l| l == name)
    }

    pub fn ids<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.id(n.as_ref())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown event label {:?}", n.as_ref())))
            })
            .collect()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }
}
