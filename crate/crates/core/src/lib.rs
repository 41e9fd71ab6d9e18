pub mod anomaly;
pub mod audio_dsp;
pub mod detect_track;
pub mod error;
pub mod fusion;
pub mod io;
pub mod pipeline;
pub mod tensor;
pub mod timebase;
pub mod vision_dsp;

pub use error::{Error, Result};
