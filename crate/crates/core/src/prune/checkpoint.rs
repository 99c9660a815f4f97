//! JSON checkpoint: network shape plus flat row-major tensors.

use serde::{Deserialize, Serialize};

use super::params::{NetShape, PruneNetParams, TENSOR_NAMES};
use super::train::TrainConfig;
use super::PruneError;

pub const CHECKPOINT_FORMAT: &str = "agp-prunenet";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDoc {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub shape: NetShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    pub tensors: Vec<TensorDoc>,
}

impl Checkpoint {
    pub fn from_params(params: &PruneNetParams, train_config: Option<TrainConfig>) -> Self {
        let tensors = TENSOR_NAMES
            .iter()
            .zip(params.tensor_shapes())
            .zip(params.tensors())
            .map(|((name, shape), data)| TensorDoc { name: name.to_string(), shape, data: data.to_vec() })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: params.shape,
            train_config,
            tensors,
        }
    }

    pub fn into_params(self) -> Result<PruneNetParams, PruneError> {
        let bad = |m: String| Err(PruneError::Checkpoint(m));
        if self.format != CHECKPOINT_FORMAT {
            return bad(format!("unknown format tag {:?}", self.format));
        }
        if self.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.tensors.len() != TENSOR_NAMES.len() {
            return bad(format!("{} tensors, expected {}", self.tensors.len(), TENSOR_NAMES.len()));
        }
        let mut params = PruneNetParams::zeros(self.shape);
        let expected = PruneNetParams::expected_shapes(self.shape);
        for (k, (doc, dst)) in self.tensors.iter().zip(params.tensors_mut()).enumerate() {
            if doc.name != TENSOR_NAMES[k] {
                return bad(format!("tensor {k} is {:?}, expected {:?}", doc.name, TENSOR_NAMES[k]));
            }
            if doc.shape != expected[k] || doc.data.len() != dst.len() {
                return bad(format!(
                    "{}: shape {:?} with {} values, expected {:?}",
                    doc.name,
                    doc.shape,
                    doc.data.len(),
                    expected[k]
                ));
            }
            dst.copy_from_slice(&doc.data);
        }
        params.validate().map_err(|e| PruneError::Checkpoint(e.to_string()))?;
        Ok(params)
    }
}

pub fn save_checkpoint(params: &PruneNetParams, train_config: Option<&TrainConfig>) -> String {
    serde_json::to_string(&Checkpoint::from_params(params, train_config.cloned()))
        .expect("checkpoint serializes")
}

/// Parses a checkpoint; with `expected` set, a different network shape is an
/// error.
pub fn load_checkpoint(bytes: &[u8], expected: Option<NetShape>) -> Result<PruneNetParams, PruneError> {
    let doc: Checkpoint =
        serde_json::from_slice(bytes).map_err(|e| PruneError::Checkpoint(e.to_string()))?;
    if let Some(want) = expected {
        if doc.shape != want {
            return Err(PruneError::Checkpoint(format!(
                "checkpoint shape {:?} does not match {:?}",
                doc.shape, want
            )));
        }
    }
    doc.into_params()
}
