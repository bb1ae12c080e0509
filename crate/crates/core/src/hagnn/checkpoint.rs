//! Versioned JSON checkpoints of trained models.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{HagnnConfig, HagnnModel};
use crate::embed::{EmbedMode, PropertyVocabulary};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read checkpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint tensors do not fit the stored config: {0}")]
    Shape(String),
}

/// How the model's text features were produced; prediction must match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedSettings {
    pub mode: EmbedMode,
    pub width: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: HagnnConfig,
    pub d_t: usize,
    pub embed: EmbedSettings,
    pub vocab: PropertyVocabulary,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &HagnnModel, embed: EmbedSettings) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            d_t: model.d_t,
            embed,
            vocab: model.vocab.clone(),
            tensors: model
                .names
                .iter()
                .zip(&model.params)
                .map(|(name, p)| Tensor {
                    name: name.clone(),
                    shape: [p.nrows(), p.ncols()],
                    data: p.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<(HagnnModel, EmbedSettings), CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: self.version });
        }
        let mut names = Vec::with_capacity(self.tensors.len());
        let mut params = Vec::with_capacity(self.tensors.len());
        for t in self.tensors {
            let a = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data)
                .map_err(|e| CheckpointError::Shape(format!("tensor `{}`: {e}", t.name)))?;
            if a.iter().any(|x| !x.is_finite()) {
                return Err(CheckpointError::Shape(format!("tensor `{}` holds non-finite values", t.name)));
            }
            names.push(t.name);
            params.push(a);
        }
        let model = HagnnModel::from_parts(self.config, self.d_t, self.vocab, names, params)
            .map_err(CheckpointError::Shape)?;
        Ok((model, self.embed))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoints serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
