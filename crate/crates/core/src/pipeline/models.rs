use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anomaly::DenseAutoencoder;
use crate::error::{Error, Result};
use crate::fusion::{AdvancedConfig, AdvancedFusionModel, BasicConfig, BasicFusionModel, TokenLayout, TokenNorm};

use super::config::RunConfig;

pub const MODELS_FILE: &str = "models.json";
pub const BASIC_FILE: &str = "basic.params";
pub const ADVANCED_FILE: &str = "advanced.params";
pub const AUTOENCODER_FILE: &str = "autoencoder.params";

/// What `train` leaves next to the parameter files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsManifest {
    pub basic: BasicConfig,
    pub advanced: AdvancedConfig,
    pub basic_norm: TokenNorm,
    pub advanced_norm: TokenNorm,
    pub autoencoder: bool,
}

/// Trained (or freshly initialized) models in training precision.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub basic: BasicFusionModel,
    pub advanced: AdvancedFusionModel,
    pub basic_norm: TokenNorm,
    pub advanced_norm: TokenNorm,
    pub autoencoder: Option<DenseAutoencoder>,
}

impl ModelBundle {
    /// Seeded, untrained fusion models with identity normalization and no
    /// autoencoder.
    pub fn untrained(config: &RunConfig) -> Result<Self> {
        let f = &config.fusion;
        Ok(ModelBundle {
            basic: BasicFusionModel::new(f.basic, f.model_seed)?,
            advanced: AdvancedFusionModel::new(f.advanced, f.model_seed)?,
            basic_norm: TokenNorm::identity(TokenLayout::Basic),
            advanced_norm: TokenNorm::identity(TokenLayout::Advanced),
            autoencoder: None,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.basic.save(dir.join(BASIC_FILE))?;
        self.advanced.save(dir.join(ADVANCED_FILE))?;
        if let Some(ae) = &self.autoencoder {
            ae.save(dir.join(AUTOENCODER_FILE))?;
        }
        let manifest = ModelsManifest {
            basic: *self.basic.config(),
            advanced: *self.advanced.config(),
            basic_norm: self.basic_norm.clone(),
            advanced_norm: self.advanced_norm.clone(),
            autoencoder: self.autoencoder.is_some(),
        };
        let path = dir.join(MODELS_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MODELS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: ModelsManifest = serde_json::from_str(&text)?;
        Ok(ModelBundle {
            basic: BasicFusionModel::load(m.basic, dir.join(BASIC_FILE))?,
            advanced: AdvancedFusionModel::load(m.advanced, dir.join(ADVANCED_FILE))?,
            basic_norm: m.basic_norm,
            advanced_norm: m.advanced_norm,
            autoencoder: if m.autoencoder {
                Some(DenseAutoencoder::load(dir.join(AUTOENCODER_FILE))?)
            } else {
                None
            },
        })
    }

    /// Inference copies: fusion models in 32-bit.
    pub fn for_inference(&self) -> InferenceModels {
        InferenceModels {
            basic: self.basic.cast(),
            advanced: self.advanced.cast(),
            basic_norm: self.basic_norm.clone(),
            advanced_norm: self.advanced_norm.clone(),
            autoencoder: self.autoencoder.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferenceModels {
    pub basic: BasicFusionModel<f32>,
    pub advanced: AdvancedFusionModel<f32>,
    pub basic_norm: TokenNorm,
    pub advanced_norm: TokenNorm,
    pub autoencoder: Option<DenseAutoencoder>,
}
