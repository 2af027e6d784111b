use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use super::{
    detect_second_stage, BBox, Corpus, DetectorStub, RegionProposal, Scene, SceneObject, WorldConfig, WorldError,
};
use crate::{par, rngs};

const MIN_STUB_ACCURACY: f64 = 0.95;
const ACCURACY_SAMPLE: usize = 5000;
const SEPARATION_SIGMAS: f64 = 4.0;
const MIN_SIBLING_IOU: f64 = 0.5;

/// A finalized world: config, frozen stub and per-category scene signatures.
#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub stub: DetectorStub,
    pub signatures: Vec<Vec<f64>>,
    /// Stub accuracy measured on a held-out clean sample at construction.
    pub stub_accuracy: f64,
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect::<Vec<f64>>()
}

fn add_noise<R: Rng + ?Sized>(rng: &mut R, base: &[f64], scale: f64) -> Vec<f64> {
    base.iter()
        .map(|x| x + scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self, WorldError> {
        let config = config.finalize();
        config.validate()?;
        let d = config.feature_dim;
        let c = config.num_categories;

        let mut rng = rngs::stream(config.world_seed, &[1]);
        let required = SEPARATION_SIGMAS * config.noise;
        let tries = 200;
        let mut stub = None;
        for _ in 0..tries {
            let protos: Vec<Vec<f64>> = (0..=c)
                .map(|_| gaussian_vec(&mut rng, d, config.prototype_scale))
                .collect();
            let candidate = DetectorStub::from_prototypes(protos);
            if candidate.min_separation() >= required {
                stub = Some(candidate);
                break;
            }
        }
        let stub = stub.ok_or(WorldError::Separation { required, tries })?;

        let mut rng = rngs::stream(config.world_seed, &[2]);
        let signatures = (0..c)
            .map(|_| gaussian_vec(&mut rng, d, config.signature_scale))
            .collect();

        let mut world = World {
            config,
            stub,
            signatures,
            stub_accuracy: 0.0,
        };
        world.stub_accuracy = world.measure_stub_accuracy(ACCURACY_SAMPLE);
        if world.stub_accuracy < MIN_STUB_ACCURACY {
            return Err(WorldError::StubAccuracy {
                accuracy: world.stub_accuracy,
                required: MIN_STUB_ACCURACY,
            });
        }
        Ok(world)
    }

    fn region_noise(&self) -> f64 {
        let cfg = &self.config;
        cfg.noise * (1.0 + cfg.proposal_noise * cfg.proposal_noise).sqrt()
    }

    /// Stub accuracy on freshly drawn clean regions of every label.
    pub fn measure_stub_accuracy(&self, n: usize) -> f64 {
        let mut rng = rngs::stream(self.config.world_seed, &[3]);
        let labels = self.stub.num_labels();
        let noise = self.region_noise();
        let correct = (0..n)
            .filter(|_| {
                let k = rng.random_range(0..labels);
                let r = add_noise(&mut rng, &self.stub.prototypes[k], noise);
                detect_second_stage(&self.stub, &r).0 == k
            })
            .count();
        correct as f64 / n as f64
    }

    pub fn generate_corpus(&self, n_scenes: usize, seed: u64) -> Result<Corpus, WorldError> {
        if n_scenes == 0 {
            return Err(WorldError::Config("n_scenes must be at least 1".into()));
        }
        let scenes = par::map_range(n_scenes, |i| self.generate_scene(seed, i as u64));
        Ok(Corpus {
            config: self.config.clone(),
            seed,
            scenes,
        })
    }

    fn draw_categories<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let cfg = &self.config;
        let c = cfg.num_categories;
        let anchor = rng.random_range(0..c);
        let mut others: Vec<usize> = (0..c)
            .filter(|&b| b != anchor && rng.random_bool(cfg.cooccurrence[anchor][b]))
            .collect();
        let cap = cfg.objects_per_scene.1 - 1;
        if others.len() > cap {
            others.shuffle(rng);
            others.truncate(cap);
            others.sort_unstable();
        }
        let mut cats = vec![anchor];
        cats.extend(others);
        cats
    }

    fn place<R: Rng + ?Sized>(&self, rng: &mut R, category: usize, anchor: Option<&SceneObject>) -> BBox {
        let cfg = &self.config;
        let prior = &cfg.placements[category];
        let rule = anchor.and_then(|a| {
            cfg.spatial_rules
                .iter()
                .find(|r| r.anchor == a.category && r.other == category)
                .map(|r| (a, r))
        });
        let (cx, cy) = match rule {
            Some((a, r)) => (
                a.bbox.cx + r.dx + r.spread * normal(rng),
                a.bbox.cy + r.dy + r.spread * normal(rng),
            ),
            None => (
                prior.cx + prior.center_spread * normal(rng),
                prior.cy + prior.center_spread * normal(rng),
            ),
        };
        let w = prior.w * (prior.size_spread * normal(rng)).exp();
        let h = prior.h * (prior.size_spread * normal(rng)).exp();
        BBox::new(cx, cy, w.min(0.6), h.min(0.6)).clamped()
    }

    fn jittered<R: Rng + ?Sized>(&self, rng: &mut R, gt: &BBox, siblings: &[BBox]) -> BBox {
        let j = self.config.jitter;
        for _ in 0..64 {
            let b = BBox::new(
                gt.cx + j * gt.w * rng.random_range(-1.0..=1.0),
                gt.cy + j * gt.h * rng.random_range(-1.0..=1.0),
                gt.w * (1.0 + j * rng.random_range(-1.0..=1.0)),
                gt.h * (1.0 + j * rng.random_range(-1.0..=1.0)),
            )
            .clamped();
            if siblings.iter().all(|s| s.iou(&b) >= MIN_SIBLING_IOU) {
                return b;
            }
        }
        *gt
    }

    fn background_box<R: Rng + ?Sized>(&self, rng: &mut R, objects: &[SceneObject]) -> Option<BBox> {
        for _ in 0..64 {
            let b = if !objects.is_empty() && rng.random_bool(self.config.background_near_object) {
                let o = &objects[rng.random_range(0..objects.len())].bbox;
                BBox::new(
                    o.cx + 0.9 * o.w * rng.random_range(-1.0..=1.0),
                    o.cy + 0.9 * o.h * rng.random_range(-1.0..=1.0),
                    o.w * (0.3 * normal(rng)).exp(),
                    o.h * (0.3 * normal(rng)).exp(),
                )
            } else {
                BBox::new(
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.05..0.3),
                    rng.random_range(0.05..0.3),
                )
            }
            .clamped();
            if objects.iter().all(|o| o.bbox.iou(&b) < 0.5) {
                return Some(b);
            }
        }
        None
    }

    /// One scene, drawn from its own `(seed, index)` stream.
    pub fn generate_scene(&self, seed: u64, index: u64) -> Scene {
        let cfg = &self.config;
        let mut rng = rngs::stream(seed, &[index]);
        let d = cfg.feature_dim;
        let bg = cfg.background();

        let cats = self.draw_categories(&mut rng);
        let (omin, omax) = cfg.objects_per_scene;
        let n_objects = rng.random_range(omin.max(cats.len())..=omax.max(cats.len()));
        let mut instance_cats = cats.clone();
        while instance_cats.len() < n_objects {
            instance_cats.push(cats[rng.random_range(0..cats.len())]);
        }

        let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
        for &category in &instance_cats {
            let bbox = self.place(&mut rng, category, objects.first());
            objects.push(SceneObject { category, bbox });
        }

        let renoise = cfg.noise * cfg.proposal_noise;
        let mut proposals = Vec::new();
        for (oi, obj) in objects.iter().enumerate() {
            let appearance = add_noise(&mut rng, &self.stub.prototypes[obj.category], cfg.noise);
            let k = rng.random_range(cfg.proposals_per_object.0..=cfg.proposals_per_object.1);
            let mut boxes: Vec<BBox> = Vec::with_capacity(k);
            for _ in 0..k {
                let b = self.jittered(&mut rng, &obj.bbox, &boxes);
                boxes.push(b);
                proposals.push(RegionProposal {
                    bbox: b,
                    features: add_noise(&mut rng, &appearance, renoise),
                    gt_label: obj.category,
                    pred_label: 0,
                    pred_confidence: 0.0,
                    object: Some(oi),
                });
            }
        }

        let n_bg = if cfg.background_rate > 0.0 {
            Poisson::new(cfg.background_rate)
                .map(|p| p.sample(&mut rng) as usize)
                .unwrap_or(0)
        } else {
            0
        };
        for _ in 0..n_bg {
            if let Some(b) = self.background_box(&mut rng, &objects) {
                let appearance = add_noise(&mut rng, &self.stub.prototypes[bg], cfg.noise);
                proposals.push(RegionProposal {
                    bbox: b,
                    features: add_noise(&mut rng, &appearance, renoise),
                    gt_label: bg,
                    pred_label: 0,
                    pred_confidence: 0.0,
                    object: None,
                });
            }
        }

        for p in &mut proposals {
            let (label, conf) = detect_second_stage(&self.stub, &p.features);
            p.pred_label = label;
            p.pred_confidence = conf;
        }

        let mut scene_features = vec![0.0; d];
        for p in &proposals {
            for (s, f) in scene_features.iter_mut().zip(&p.features) {
                *s += f / proposals.len() as f64;
            }
        }
        let mut present: Vec<usize> = objects.iter().map(|o| o.category).collect();
        present.sort_unstable();
        present.dedup();
        for c in present {
            for (s, g) in scene_features.iter_mut().zip(&self.signatures[c]) {
                *s += g;
            }
        }
        let scene_features = add_noise(&mut rng, &scene_features, cfg.scene_noise);

        Scene {
            id: index,
            objects,
            proposals,
            scene_features,
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Build the world described by `cfg` and draw `n_scenes` scenes from it.
pub fn generate_corpus(cfg: &WorldConfig, n_scenes: usize, seed: u64) -> Result<Corpus, WorldError> {
    World::new(cfg.clone())?.generate_corpus(n_scenes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            num_categories: 4,
            feature_dim: 8,
            group_size: 2,
            prototype_scale: 2.5,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let world = World::new(small()).unwrap();
        let a = world.generate_corpus(20, 5).unwrap();
        let b = world.generate_corpus(20, 5).unwrap();
        assert_eq!(a, b);
        let c = world.generate_corpus(20, 6).unwrap();
        assert_ne!(a.scenes, c.scenes);
    }

    #[test]
    fn single_object_single_proposal_no_background() {
        let cfg = WorldConfig {
            objects_per_scene: (1, 1),
            proposals_per_object: (1, 1),
            background_rate: 0.0,
            ..small()
        };
        let corpus = generate_corpus(&cfg, 50, 1).unwrap();
        for s in &corpus.scenes {
            assert_eq!(s.objects.len(), 1);
            assert_eq!(s.proposals.len(), 1);
            assert_eq!(s.scene_features.len(), 8);
        }
    }

    #[test]
    fn structural_invariants_hold() {
        let world = World::new(small()).unwrap();
        assert!(world.stub.min_separation() >= 4.0 * world.config.noise);
        let corpus = world.generate_corpus(100, 3).unwrap();
        for s in &corpus.scenes {
            for p in &s.proposals {
                assert!(p.bbox.is_normalized());
                assert!(p.gt_label <= 4 && p.pred_label <= 4);
                match p.object {
                    Some(o) => assert_eq!(p.gt_label, s.objects[o].category),
                    None => {
                        assert_eq!(p.gt_label, 4);
                        assert!(s.max_iou_with_objects(0).is_finite());
                    }
                }
            }
            for o in 0..s.objects.len() {
                let idx: Vec<usize> = s.proposals_of(o).collect();
                assert!(!idx.is_empty());
                for &a in &idx {
                    for &b in &idx {
                        assert!(s.proposals[a].bbox.iou(&s.proposals[b].bbox) >= 0.5);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_scenes_rejected() {
        let world = World::new(small()).unwrap();
        assert!(world.generate_corpus(0, 1).is_err());
    }
}
