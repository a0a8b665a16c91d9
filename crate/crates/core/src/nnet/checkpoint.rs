//! JSON checkpoints: config, its hash and every tensor with its shape.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::params::{ModelConfig, ModelParams, Tensors, TENSOR_NAMES};
use crate::worldgen::io::sha256_hex;

pub const CHECKPOINT_FORMAT: &str = "admitqa-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub config_hash: String,
    pub tensors: Vec<NamedTensor>,
}

pub fn config_hash(cfg: &ModelConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("config serializes"))
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams) -> Self {
        let shapes = Tensors::shapes(&params.config);
        let tensors = TENSOR_NAMES
            .iter()
            .zip(params.tensors.as_slices())
            .zip(shapes)
            .map(|((name, data), shape)| NamedTensor {
                name: name.to_string(),
                shape,
                data: data.to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: params.config.clone(),
            config_hash: config_hash(&params.config),
            tensors,
        }
    }

    pub fn into_params(self) -> Result<ModelParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Model(format!("unsupported checkpoint format {:?}", self.format)));
        }
        if self.config_hash != config_hash(&self.config) {
            return Err(Error::Model("checkpoint config hash mismatch".into()));
        }
        let mut t = Tensors::zeros(&self.config);
        let shapes = Tensors::shapes(&self.config);
        for ((name, slot), shape) in TENSOR_NAMES.iter().zip(t.as_mut_slices()).zip(shapes) {
            let nt = self
                .tensors
                .iter()
                .find(|n| n.name == *name)
                .ok_or_else(|| Error::Model(format!("checkpoint lacks tensor {name}")))?;
            if nt.shape != shape || nt.data.len() != shape[0] * shape[1] {
                return Err(Error::Model(format!("tensor {name} has the wrong shape")));
            }
            *slot = nt.data.clone();
        }
        ModelParams::from_tensors(self.config, t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

/// Hex sha256 of the serialized checkpoint of `params`.
pub fn params_hash(params: &ModelParams) -> Result<String> {
    Checkpoint::from_params(params).hash()
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<String> {
    let ck = Checkpoint::from_params(params);
    let bytes = ck.to_bytes()?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_slice(&bytes)?;
    ck.into_params()
}
