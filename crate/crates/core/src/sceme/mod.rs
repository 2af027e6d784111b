//! The structure context model: a fully connected graph over the proposals
//! of a scene plus a scene node, updated by attention-weighted Region-GRU
//! messages and a Scene-GRU, trained on the detection objective.
//!
//! The gates of both GRUs, together with the initial node features, form the
//! context profile of each region.

mod message;
mod model;
mod train;

pub use message::{
    backward, classify, dropout_mask, forward, geometry_encoding, message_pass, scene_objective, ContextProfile,
    PassTrace, RegionContext, BOX_LOSS_WEIGHT, PROFILE_BLOCKS,
};
pub use model::{ScemeConfig, ScemeModel, GEOMETRY_FEATURES};
pub use train::{
    clean_accuracy, extract_context_profiles, load_sceme, save_sceme, train_sceme, ProfileGroups, ScemeHyper,
    TrainedSceme, SCEME_KIND,
};

use thiserror::Error;

use crate::codec::CodecError;
use crate::numkit::NumError;

#[derive(Debug, Error)]
pub enum ScemeError {
    #[error("scene {0} has no proposals")]
    EmptyScene(u64),
    #[error("scene {scene}: feature vectors must have dimension {expected}")]
    Dimension { scene: u64, expected: usize },
    #[error("invalid context-model config: {0}")]
    Config(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}, seed {seed}")]
    Diverged { seed: u64, epoch: usize, step: u64 },
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error("model file: {0}")]
    Codec(#[from] CodecError),
}
