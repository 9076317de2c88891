//! Miniature single-stage carton detector on candle.
//!
//! The network runs in `f32` on the CPU. Losses and their gradients come from
//! `scd_core::losses` in `f64`; a training step feeds those gradients back into the graph
//! and applies momentum SGD.

mod checkpoint;
mod config;
mod metrics;
mod net;
mod params;
mod predict;
mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
pub use config::{BgsConfig, ModelConfig, PredictConfig, TrainConfig, PYRAMID_STRIDES};
pub use metrics::{matched_ious, spearman, MetricsLog};
pub use net::{Detector, HeadOutputs, LevelOutputs, Mode, PAD_MULTIPLE};
pub use params::ParamStore;
pub use predict::RawPredictions;
pub use train::{fit, train_step, Sample, StepReport, Trainer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("image size must be positive, got {height}x{width}")]
    ImageSize { height: usize, width: usize },
    #[error("non-finite {term} loss ({value}) at iteration {iteration}")]
    NonFiniteLoss { term: &'static str, value: f64, iteration: usize },
    #[error("image {image_id}: label {label} is not in the model's taxonomy")]
    Label { image_id: u64, label: String },
    #[error("{}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Geometry(#[from] scd_core::geometry::GeometryError),
    #[error(transparent)]
    Loss(#[from] scd_core::losses::LossError),
}
