use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WorldError;

/// Placement prior of one category: center and log-size means with spreads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub cx: f64,
    pub cy: f64,
    pub center_spread: f64,
    pub w: f64,
    pub h: f64,
    pub size_spread: f64,
}

/// Relative-position prior: when the scene is anchored on `anchor`, objects
/// of `other` are centered near the anchor object plus `(dx, dy)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialRule {
    pub anchor: usize,
    pub other: usize,
    pub dx: f64,
    pub dy: f64,
    pub spread: f64,
}

/// Everything that defines a synthetic world.
///
/// Fields left empty (`cooccurrence`, `placements`, `spatial_rules`) are
/// filled by [`WorldConfig::finalize`] from the group parameters and
/// `world_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub num_categories: usize,
    pub feature_dim: usize,
    /// `cooccurrence[a][b]`: probability that `b` is present in a scene
    /// anchored on `a`. Symmetric, diagonal ignored.
    pub cooccurrence: Vec<Vec<f64>>,
    pub group_size: usize,
    pub within_group: f64,
    pub across_group: f64,
    pub placements: Vec<Placement>,
    pub spatial_rules: Vec<SpatialRule>,
    pub objects_per_scene: (usize, usize),
    pub proposals_per_object: (usize, usize),
    /// Expected number of background proposals per scene (Poisson).
    pub background_rate: f64,
    /// Probability that a background proposal is placed next to an object.
    pub background_near_object: f64,
    /// Object-level feature noise σ.
    pub noise: f64,
    /// Per-proposal re-noise, as a fraction of `noise`.
    pub proposal_noise: f64,
    pub prototype_scale: f64,
    pub signature_scale: f64,
    pub scene_noise: f64,
    /// Largest center/size perturbation of a proposal, relative to its object.
    pub jitter: f64,
    /// Stub confidence below which a detection is not accepted.
    pub acceptance_cutoff: f64,
    pub world_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_categories: 6,
            feature_dim: 32,
            cooccurrence: Vec::new(),
            group_size: 3,
            within_group: 0.6,
            across_group: 0.05,
            placements: Vec::new(),
            spatial_rules: Vec::new(),
            objects_per_scene: (1, 6),
            proposals_per_object: (1, 12),
            background_rate: 3.0,
            background_near_object: 0.6,
            noise: 1.0,
            proposal_noise: 0.5,
            prototype_scale: 1.0,
            signature_scale: 1.0,
            scene_noise: 0.1,
            jitter: 0.1,
            acceptance_cutoff: 0.5,
            world_seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn background(&self) -> usize {
        self.num_categories
    }

    /// Fill empty derived tables. Idempotent.
    pub fn finalize(mut self) -> Self {
        let c = self.num_categories;
        let mut rng = ChaCha8Rng::seed_from_u64(self.world_seed ^ 0x005e_ed0f_c00c);
        if self.cooccurrence.is_empty() {
            let g = self.group_size.max(1);
            self.cooccurrence = (0..c)
                .map(|a| {
                    (0..c)
                        .map(|b| {
                            if a == b {
                                1.0
                            } else if a / g == b / g {
                                self.within_group
                            } else {
                                self.across_group
                            }
                        })
                        .collect()
                })
                .collect();
        }
        if self.placements.is_empty() {
            self.placements = (0..c)
                .map(|_| Placement {
                    cx: rng.random_range(0.3..0.7),
                    cy: rng.random_range(0.25..0.75),
                    center_spread: 0.12,
                    w: rng.random_range(0.1..0.25),
                    h: rng.random_range(0.1..0.25),
                    size_spread: 0.2,
                })
                .collect();
        }
        if self.spatial_rules.is_empty() {
            let g = self.group_size.max(1);
            for a in 0..c {
                for b in 0..c {
                    if a != b && a / g == b / g {
                        self.spatial_rules.push(SpatialRule {
                            anchor: a,
                            other: b,
                            dx: rng.random_range(-0.25..0.25),
                            dy: rng.random_range(-0.25..0.25),
                            spread: 0.05,
                        });
                    }
                }
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let c = self.num_categories;
        let bad = |msg: String| Err(WorldError::Config(msg));
        if c < 2 {
            return bad(format!("need at least 2 categories, got {c}"));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.cooccurrence.len() != c || self.cooccurrence.iter().any(|row| row.len() != c) {
            return bad(format!("co-occurrence matrix must be {c}x{c}"));
        }
        for a in 0..c {
            for b in 0..c {
                let p = self.cooccurrence[a][b];
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("co-occurrence[{a}][{b}] = {p} outside [0,1]"));
                }
                if (p - self.cooccurrence[b][a]).abs() > 1e-12 {
                    return bad(format!("co-occurrence not symmetric at ({a},{b})"));
                }
            }
        }
        if self.placements.len() != c {
            return bad(format!("need {c} placements, got {}", self.placements.len()));
        }
        for r in &self.spatial_rules {
            if r.anchor >= c || r.other >= c {
                return bad("spatial rule references unknown category".into());
            }
        }
        let (omin, omax) = self.objects_per_scene;
        if omin == 0 || omin > omax {
            return bad(format!("empty objects_per_scene range ({omin}, {omax})"));
        }
        let (pmin, pmax) = self.proposals_per_object;
        if pmin == 0 || pmin > pmax {
            return bad(format!("empty proposals_per_object range ({pmin}, {pmax})"));
        }
        if !(self.noise > 0.0) {
            return bad("noise must be positive".into());
        }
        if !(self.background_rate >= 0.0) || !(self.prototype_scale > 0.0) {
            return bad("background_rate >= 0 and prototype_scale > 0 required".into());
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad("jitter must be in [0, 0.5)".into());
        }
        if !(0.0..1.0).contains(&self.acceptance_cutoff) {
            return bad("acceptance_cutoff must be in [0, 1)".into());
        }
        Ok(())
    }
}
