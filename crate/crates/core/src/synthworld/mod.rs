//! Synthetic scene corpora and the frozen detector stub.
//!
//! A scene is a set of objects with boxes and per-proposal node features
//! (`prototype + noise`), a handful of background proposals, and a scene-node
//! feature vector that carries the category-set signature of the scene.

mod bbox;
mod config;
mod generate;
pub(crate) mod io;
mod stub;

pub use bbox::BBox;
pub use config::{Placement, SpatialRule, WorldConfig};
pub use generate::{generate_corpus, World};
pub use io::{decode_scenes, encode_scenes, load_corpus, save_corpus, CORPUS_KIND};
pub use stub::{detect_second_stage, DetectorStub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("could not separate prototypes by {required:.3} after {tries} draws")]
    Separation { required: f64, tries: usize },
    #[error("stub accuracy {accuracy:.4} on clean regions is below {required}")]
    StubAccuracy { accuracy: f64, required: f64 },
    #[error("corpus file: {0}")]
    Codec(#[from] CodecError),
    #[error("corpus header: {0}")]
    Header(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: usize,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    pub bbox: BBox,
    pub features: Vec<f64>,
    /// Ground-truth label; `C` is background.
    pub gt_label: usize,
    pub pred_label: usize,
    pub pred_confidence: f64,
    /// Index into `Scene::objects`, `None` for background proposals.
    pub object: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub objects: Vec<SceneObject>,
    pub proposals: Vec<RegionProposal>,
    pub scene_features: Vec<f64>,
}

impl Scene {
    pub fn proposals_of(&self, object: usize) -> impl Iterator<Item = usize> + '_ {
        self.proposals
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.object == Some(object))
            .map(|(i, _)| i)
    }

    pub fn background_proposals(&self) -> impl Iterator<Item = usize> + '_ {
        self.proposals
            .iter()
            .enumerate()
            .filter(|(_, p)| p.object.is_none())
            .map(|(i, _)| i)
    }

    /// Largest IoU between proposal `i` and any ground-truth object other
    /// than the one it was proposed from.
    pub fn max_iou_with_objects(&self, i: usize) -> f64 {
        let p = &self.proposals[i];
        self.objects
            .iter()
            .enumerate()
            .filter(|(k, _)| Some(*k) != p.object)
            .map(|(_, o)| p.bbox.iou(&o.bbox))
            .fold(0.0, f64::max)
    }

    pub fn present_categories(&self) -> Vec<usize> {
        let mut cats: Vec<usize> = self.objects.iter().map(|o| o.category).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }
}

/// Scenes plus the world they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: WorldConfig,
    pub seed: u64,
    pub scenes: Vec<Scene>,
}

impl Corpus {
    pub fn num_proposals(&self) -> usize {
        self.scenes.iter().map(|s| s.proposals.len()).sum()
    }
}
