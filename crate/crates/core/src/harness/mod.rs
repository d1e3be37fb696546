//! Experiment drivers behind the command-line tool: equivariance gaps,
//! training, evaluation under transformations, and layer timing.

mod checkpoint;
mod config;
mod data;
mod eqgap;
mod eval;
mod timing;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::{
    hash_json, sub_seed, DataConfig, EqGapConfig, EvalConfig, GenMeshConfig, RunConfig, TimingConfig, TrainConfig, SEED_ENV,
};
pub use data::{default_frames, load_dataset, prepare, prepare_with_frames, Dataset, Labels, Prepared, Sample};
pub use eqgap::{eqgap, logits_mse, EqGapReport, FamilyGaps};
pub use eval::{accuracy, evaluate_checkpoint, evaluate_model, EvalReport};
pub use timing::{time_layers, LayerTiming, TimingReport};
pub use train::{train, train_model, EpochLog, TrainReport, TrainedModel};

use serde::Serialize;

/// Identifier of the source tree this binary was built from.
pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("MESHNET_BUILD_ID"));

/// Provenance fields embedded in every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportHeader {
    pub command: String,
    pub config_hash: String,
    pub build_id: String,
    pub seed: u64,
}

impl ReportHeader {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        ReportHeader {
            command: command.to_string(),
            config_hash: cfg.hash(),
            build_id: BUILD_ID.to_string(),
            seed: cfg.seed,
        }
    }
}
