//! Dual conditional diffusion for next-item sequential recommendation.
//!
//! The denoiser predicts the next item's embedding from a noised copy of the
//! user's history concatenated with a noised target, conditioned on the clean
//! history through cross-attention and conditional layer norms. Predictions
//! are mapped back to items by cosine similarity against the embedding table.

pub mod config;
pub mod data;
pub mod dcdt;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod itemspace;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod trainer;

pub use config::ExperimentConfig;
pub use data::{InteractionLog, InteractionSequence, SplitDataset, SyntheticKind};
pub use dcdt::{DcdtConfig, DcdtParams, Variant};
pub use error::{Error, Result};
pub use eval::{EvalReport, EvalSettings};
pub use graph::Tensor;
pub use itemspace::{ItemEmbeddingTable, ItemId, PADDING};
pub use model::DcrecModel;
pub use sampler::InferenceConfig;
pub use schedule::{NoiseSchedule, ScheduleConfig};
pub use trainer::{LambdaKind, LambdaSchedule, LossRecord, LossTerm};
