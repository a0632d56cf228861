//! Classifier definitions, training, hyperparameter search and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod grid;
pub mod model;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{FeatureMode, ModelConfig, Placement};
pub use data::{Example, ExampleSet};
pub use grid::{grid_search, select_best, GridEntry, GridResult, Selection};
pub use model::{Model, StateEntry, Tower};
pub use train::{EarlyStopping, EpochLog, StopDecision, TrainProgress, TrainReport, Trainer};

use thiserror::Error;

use crate::acf::AcfError;
use crate::ingest::IngestError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum ZooError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Acf(#[from] AcfError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("leakage: {0}")]
    Leakage(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
