//! Token construction and the two cross-modal fusion models.

mod advanced;
mod basic;
mod ensemble;
mod labels;
mod tokens;
mod train;

pub use advanced::{AdvancedConfig, AdvancedFusionModel, AdvancedOutput, CrossLayer};
pub use basic::{BasicConfig, BasicFusionModel, BasicOutput, EncoderLayer};
pub use ensemble::{
    fuse_audio_ensemble, AudioEnsembleFusion, EnsembleEmbedding, EnsembleLayer, StubEncoders, StubIdentity,
    ENSEMBLE_INPUT_DIM, ENSEMBLE_OUTPUT_DIM,
};
pub use labels::{EventLabels, DEFAULT_ANOMALY_LABELS, DEFAULT_EVENT_LABELS, EVENT_CLASSES};
pub use tokens::{build_audio_tokens, build_visual_tokens, AudioToken, FeatureNorm, TokenLayout, TokenNorm, VisualToken};
pub use train::{train_step, train_step_with, FusionExample, Sgd, Trainable};
