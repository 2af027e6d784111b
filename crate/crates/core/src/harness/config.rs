use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::codec::sha256_hex;
use crate::guardians::{AeConfig, AeHyper, ThresholdMode};
use crate::redteam::{AttackKind, AttackPlan};
use crate::sceme::{ScemeConfig, ScemeHyper};
use crate::synthworld::WorldConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_scenes: usize,
    /// Clean scenes used to calibrate thresholds.
    pub heldout_scenes: usize,
    /// Clean scenes the attacks are drawn from.
    pub eval_scenes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_scenes: 2000,
            heldout_scenes: 500,
            eval_scenes: 600,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub train: u64,
    pub heldout: u64,
    pub eval: u64,
    pub attack: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            train: 1,
            heldout: 2,
            eval: 3,
            attack: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub target_fpr: f64,
    pub threshold_mode: ThresholdMode,
    pub fpr_grid: Vec<f64>,
    /// Strata with fewer attacked objects are suppressed.
    pub min_bucket_samples: usize,
    /// Also train and evaluate node-feature-only autoencoders.
    pub node_only_ablation: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            target_fpr: 0.05,
            threshold_mode: ThresholdMode::PerCategory,
            fpr_grid: vec![0.001, 0.01, 0.05, 0.1, 0.2],
            min_bucket_samples: 50,
            node_only_ablation: true,
        }
    }
}

/// Everything a run needs, read from one TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub data: DataConfig,
    pub seeds: Seeds,
    pub sceme: ScemeConfig,
    pub sceme_training: ScemeHyper,
    /// Autoencoder widths; derived from the feature dimension when absent.
    pub autoencoder: Option<AeConfig>,
    pub ae_training: AeHyper,
    pub attacks: Vec<AttackPlan>,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: WorldConfig::default(),
            data: DataConfig::default(),
            seeds: Seeds::default(),
            sceme: ScemeConfig::default(),
            sceme_training: ScemeHyper::default(),
            autoencoder: None,
            ae_training: AeHyper::default(),
            attacks: default_attacks(),
            eval: EvalConfig::default(),
        }
    }
}

/// Digital (all coordinates) and physical (25% block) variants of the three
/// attack goals.
pub fn default_attacks() -> Vec<AttackPlan> {
    let mut v = Vec::new();
    for (fraction, epsilon) in [(1.0, 1.5), (0.25, 4.0)] {
        for kind in AttackKind::ALL {
            v.push(AttackPlan {
                kind,
                epsilon,
                steps: 10,
                step_size: None,
                mask_fraction: fraction,
                attempts: 3,
            });
        }
    }
    v
}

/// Column label of an attack plan: `digital-…` or `physical-…`.
pub fn attack_label(plan: &AttackPlan) -> String {
    let setting = if plan.mask_fraction >= 1.0 {
        "digital"
    } else {
        "physical"
    };
    format!("{setting}-{}", plan.kind.name())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, HarnessError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn ae_config(&self) -> AeConfig {
        self.autoencoder
            .clone()
            .unwrap_or_else(|| AeConfig::for_dim(self.world.feature_dim))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.world
            .clone()
            .finalize()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.sceme.validate().map_err(HarnessError::Config)?;
        if self.sceme.feature_dim != self.world.feature_dim {
            return bad(format!(
                "sceme.feature_dim {} differs from world.feature_dim {}",
                self.sceme.feature_dim, self.world.feature_dim
            ));
        }
        if self.sceme.num_labels != self.world.num_categories + 1 {
            return bad(format!(
                "sceme.num_labels must be num_categories + 1 = {}",
                self.world.num_categories + 1
            ));
        }
        let ae = self.ae_config();
        ae.validate().map_err(HarnessError::Config)?;
        if ae.dim != self.world.feature_dim {
            return bad("autoencoder.dim differs from world.feature_dim".into());
        }
        if self.data.train_scenes == 0 || self.data.heldout_scenes == 0 || self.data.eval_scenes == 0 {
            return bad("all corpora need at least one scene".into());
        }
        if !(self.sceme_training.lr > 0.0) || !(self.ae_training.lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.eval.target_fpr) || self.eval.fpr_grid.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("false-positive rates must lie in [0, 1]".into());
        }
        let mut labels = BTreeSet::new();
        for plan in &self.attacks {
            plan.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            if !labels.insert(attack_label(plan)) {
                return bad(format!("duplicate attack {}", attack_label(plan)));
            }
        }
        Ok(())
    }

    /// Digest of the canonical JSON form, recorded in run manifests.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_inconsistent_dims_are_rejected() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[world]\nfeature_dim = 16").is_err());
        assert!(RunConfig::from_toml("[world]\nfeature_dim = 16\n[sceme]\nfeature_dim = 16").is_ok());
    }

    #[test]
    fn attacks_parse_from_tables() {
        let cfg = RunConfig::from_toml(
            "[[attacks]]\nkind = \"hide\"\nepsilon = 1.0\nsteps = 5\n\n[[attacks]]\nkind = \"hide\"\nepsilon = 3.0\nsteps = 5\nmask_fraction = 0.25\n",
        )
        .unwrap();
        let labels: Vec<String> = cfg.attacks.iter().map(attack_label).collect();
        assert_eq!(labels, ["digital-hide", "physical-hide"]);
        assert!(RunConfig::from_toml("[[attacks]]\nkind = \"hide\"\nepsilon = 1.0\nsteps = 5\n[[attacks]]\nkind = \"hide\"\nepsilon = 2.0\nsteps = 5\n").is_err());
    }
}
