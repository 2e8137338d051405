//! Pairwise pointmap network and its event-conditioned interpolation branch.

mod config;
mod infer;
pub mod layers;
pub mod loss;
mod model;
mod train;

pub use config::ModelConfig;
pub use infer::{source_channels, InterpOutput, Sources};
pub use model::{encode_modality, patch_embed, BaseVars, DirectionInputs, Model, Variant, INTERP};
pub use train::{oracle_sources, sample_gradients, train, Batch, Dataset, LogRow, TrainConfig, TrainLog, TrainStage};
