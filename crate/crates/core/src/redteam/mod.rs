//! Gradient-sign attacks on the detector stub in feature space.
//!
//! Attacks change region node features only. Scene features and every other
//! proposal stay as they were, so the context seen by the defense is honest.

mod attack;
mod corpus;

pub use attack::{attack_region, AttackGoal, AttackOutcome, AttackSpec, CoordMask};
pub use corpus::{
    build_attacked_corpus, encode_attacked, load_attacked, save_attacked, AttackAnnotation, AttackKind, AttackPlan,
    AttackStats, AttackedCorpus, ATTACKED_KIND, MIN_SUCCESS_RATE,
};

use thiserror::Error;

use crate::codec::CodecError;
use crate::synthworld::WorldError;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack: {0}")]
    Spec(String),
    #[error("scene {scene}, region {region}: {reason}")]
    Region {
        scene: u64,
        region: usize,
        reason: &'static str,
    },
    #[error(
        "{kind} attacks succeeded on {:.1}% of scenes (epsilon {epsilon}, {steps} steps); budget too small",
        100.0 * rate
    )]
    LowSuccess {
        kind: &'static str,
        rate: f64,
        epsilon: f64,
        steps: usize,
    },
    #[error("attacked corpus file: {0}")]
    Codec(#[from] CodecError),
    #[error(transparent)]
    World(#[from] WorldError),
}
