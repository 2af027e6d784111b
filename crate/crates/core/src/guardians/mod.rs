//! Per-category autoencoders over context profiles, reconstruction-error
//! scoring and threshold calibration.

mod ae;
mod net;
mod threshold;

pub use ae::{
    batch_loss, reconstruction_error, train_autoencoder, AeHyper, AeMeta, AutoEncoder, ProfileFeatures, Scaler, AE_KIND,
};
pub use net::{AeConfig, AeNet};
pub use threshold::{quantile_threshold, ThresholdMode, ThresholdTable};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::codec::CodecError;
use crate::numkit::NumError;
use crate::par;
use crate::sceme::{ContextProfile, ProfileGroups};

#[derive(Debug, Error)]
pub enum GuardError {
    #[error("category {category}: {count} profiles, at least {required} required")]
    Insufficient {
        category: usize,
        count: usize,
        required: usize,
    },
    #[error("profile has {got} entries, autoencoder expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("{0}")]
    Config(String),
    #[error("autoencoder for category {category} diverged in epoch {epoch}")]
    Diverged { category: usize, epoch: usize },
    #[error("no autoencoder for the background category {0}")]
    MissingBackground(usize),
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error("model file: {0}")]
    Codec(#[from] CodecError),
    #[error("io: {0}")]
    Io(String),
}

/// The trained autoencoders of a run. Regions predicted as a category
/// without its own autoencoder are scored by the background one.
#[derive(Clone, Debug, PartialEq)]
pub struct Guardians {
    pub background: usize,
    pub aes: BTreeMap<usize, AutoEncoder>,
    /// Categories skipped for lack of profiles, with their counts.
    pub skipped: BTreeMap<usize, usize>,
}

/// Score of one profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub error: f64,
    /// Category of the autoencoder that produced the score.
    pub scorer: usize,
    /// True when the predicted category had no autoencoder of its own.
    pub fallback: bool,
}

impl Guardians {
    /// Train one autoencoder per category with enough profiles. Categories
    /// train independently and in parallel.
    pub fn train(
        groups: &ProfileGroups,
        background: usize,
        config: &AeConfig,
        hyper: &AeHyper,
    ) -> Result<Guardians, GuardError> {
        let eligible: Vec<(usize, &Vec<ContextProfile>)> = groups
            .iter()
            .filter(|(_, ps)| ps.len() >= hyper.min_profiles.max(1))
            .map(|(&c, ps)| (c, ps))
            .collect();
        let skipped = groups
            .iter()
            .filter(|(_, ps)| ps.len() < hyper.min_profiles.max(1))
            .map(|(&c, ps)| (c, ps.len()))
            .collect();
        let trained = par::try_map(&eligible, |(c, ps)| train_autoencoder(*c, ps, config.clone(), hyper))?;
        let aes: BTreeMap<usize, AutoEncoder> = trained.into_iter().map(|ae| (ae.category(), ae)).collect();
        if !aes.contains_key(&background) {
            return Err(GuardError::MissingBackground(background));
        }
        Ok(Guardians {
            background,
            aes,
            skipped,
        })
    }

    pub fn scorer_for(&self, predicted: usize) -> (&AutoEncoder, bool) {
        match self.aes.get(&predicted) {
            Some(ae) => (ae, false),
            None => (&self.aes[&self.background], true),
        }
    }

    pub fn score(&self, profile: &ContextProfile) -> Result<Score, GuardError> {
        let (ae, fallback) = self.scorer_for(profile.predicted);
        Ok(Score {
            error: reconstruction_error(ae, profile)?,
            scorer: ae.category(),
            fallback,
        })
    }

    /// Benign errors of held-out profiles grouped by scoring category.
    pub fn benign_errors(&self, heldout: &ProfileGroups) -> Result<BTreeMap<usize, Vec<f64>>, GuardError> {
        let profiles: Vec<&ContextProfile> = heldout.values().flatten().collect();
        let scores = par::try_map(&profiles, |p| self.score(p))?;
        let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for s in scores {
            out.entry(s.scorer).or_default().push(s.error);
        }
        Ok(out)
    }
}

/// Calibrate the cutoff of each autoencoder at `target_fpr` on held-out
/// benign profiles.
pub fn calibrate_thresholds(
    guardians: &Guardians,
    heldout: &ProfileGroups,
    target_fpr: f64,
    mode: ThresholdMode,
) -> Result<ThresholdTable, GuardError> {
    let errors = guardians.benign_errors(heldout)?;
    let categories: Vec<usize> = guardians.aes.keys().copied().collect();
    ThresholdTable::calibrate(&errors, &categories, target_fpr, mode)
}
