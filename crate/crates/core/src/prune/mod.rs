//! The dual-pruning network: shared GCN latents feeding a directed edge-weight
//! head (soft pruning) and a node-mask head (hard pruning).

mod adam;
mod backprop;
mod checkpoint;
mod design;
mod forward;
mod gumbel;
mod loss;
mod params;
mod train;

pub use adam::AdamW;
pub use backprop::{loss_and_grad, LossParts, SampleNoise};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use design::design_topology;
pub use forward::{edge_head, forward, gcn_forward, node_head, ForwardOutput};
pub use gumbel::{gumbel_sigmoid, gumbel_sigmoid_grad, logistic_noise, GumbelMode};
pub use loss::{edge_loss, focal_loss, node_loss, total_loss, NodeLossConfig};
pub use params::{NetShape, PruneNetParams, TENSOR_DECAYS, TENSOR_NAMES};
pub use train::{train, train_with_init, LogRecord, TrainConfig, TrainLog, TrainOutput};

use crate::embed::EmbedError;
use crate::graph::GraphError;

#[derive(Debug, thiserror::Error)]
pub enum PruneError {
    #[error("parameter shape error: {0}")]
    Shape(String),
    #[error("{what}: expected {expected}, got {actual}")]
    Dimension { what: &'static str, expected: usize, actual: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training diverged at step {step}: non-finite loss")]
    TrainingDiverged { step: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
