use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Detection,
    Track,
    Classification,
    Anomaly,
    Metric,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Detection,
        EventKind::Track,
        EventKind::Classification,
        EventKind::Anomaly,
        EventKind::Metric,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Detection => "detection",
            EventKind::Track => "track",
            EventKind::Classification => "classification",
            EventKind::Anomaly => "anomaly",
            EventKind::Metric => "metric",
        }
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub window: usize,
    pub kind: EventKind,
    pub payload: Value,
}

impl EventRecord {
    pub fn new(t: f64, window: usize, kind: EventKind, payload: impl Serialize) -> Result<Self> {
        Ok(EventRecord {
            t,
            window,
            kind,
            payload: serde_json::to_value(payload)?,
        })
    }
}

/// Line-delimited JSON sink that refuses out-of-order timestamps.
#[derive(Debug)]
pub struct EventLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
    last_t: f64,
    written: usize,
}

impl EventLogWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(EventLogWriter {
            path,
            out: BufWriter::new(file),
            last_t: f64::NEG_INFINITY,
            written: 0,
        })
    }

    pub fn append(&mut self, record: &EventRecord) -> Result<()> {
        if record.t < self.last_t {
            return Err(Error::invalid(format!(
                "event at t = {} precedes the previous record at t = {}",
                record.t, self.last_t
            )));
        }
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        self.last_t = record.t;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

/// Writes `records` as JSONL, stably sorted by timestamp.
pub fn emit_event_log(path: impl AsRef<Path>, records: &[EventRecord]) -> Result<PathBuf> {
    let mut sorted: Vec<&EventRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut w = EventLogWriter::create(path)?;
    for r in sorted {
        w.append(r)?;
    }
    w.finish()
}

pub fn read_event_log(path: impl AsRef<Path>) -> Result<Vec<EventRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "event log",
            reason: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}
