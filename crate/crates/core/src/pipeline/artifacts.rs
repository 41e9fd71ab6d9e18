use std::fs;
use std::path::{Path, PathBuf};

use crate::anomaly::{AnomalyKind, AnomalyReport};
use crate::error::{Error, Result};
use crate::io;
use crate::timebase::Frame;

pub const FRAME_FILE: &str = "frame.pgm";
pub const SNIPPET_FILE: &str = "snippet.wav";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactPaths {
    pub dir: PathBuf,
    pub frame: PathBuf,
    pub snippet: PathBuf,
    pub report: PathBuf,
}

/// `<milliseconds, 9 digits>_<kind>`, so a plain listing sorts by time.
pub fn artifact_dir_name(timestamp_s: f64, kind: AnomalyKind) -> String {
    let ms = (timestamp_s.max(0.0) * 1000.0).round() as u64;
    format!("{ms:09}_{kind}")
}

/// Saves the frame, the audio window and the report of an anomaly under
/// `root`, in a directory named by [`artifact_dir_name`].
pub fn persist_anomaly_artifact(
    report: &AnomalyReport,
    kind: AnomalyKind,
    frame: &Frame,
    audio: &[f64],
    sample_rate: u32,
    root: impl AsRef<Path>,
) -> Result<ArtifactPaths> {
    if !report.triggered {
        return Err(Error::invalid("only triggered anomalies are persisted"));
    }
    let dir = root.as_ref().join(artifact_dir_name(report.timestamp_s, kind));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let paths = ArtifactPaths {
        frame: dir.join(FRAME_FILE),
        snippet: dir.join(SNIPPET_FILE),
        report: dir.join(REPORT_FILE),
        dir,
    };
    io::write_pgm(&paths.frame, frame)?;
    io::write_wav(&paths.snippet, audio, sample_rate)?;
    let text = serde_json::to_string_pretty(report)?;
    fs::write(&paths.report, text).map_err(|e| Error::io(&paths.report, e))?;
    Ok(paths)
}
