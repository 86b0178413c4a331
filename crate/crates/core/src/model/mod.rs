//! The fusion network: a residual CNN over the face whose five stages each
//! concatenate features computed from one selected patch.

mod checkpoint;
mod config;
mod heads;
mod net;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, CheckpointContents, CheckpointRecord, TrainMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{FusionConfig, StageSpec};
pub use heads::{age_distribution, predict_classification, predict_regression, AgeDistribution};
pub use net::{Architecture, FusionNet, PatchStem, Stage};
