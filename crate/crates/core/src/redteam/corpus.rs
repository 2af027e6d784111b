use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attack::{attack_region, AttackGoal, AttackSpec, CoordMask};
use super::AttackError;
use crate::codec::{ByteReader, CodecError, Container};
use crate::par;
use crate::rngs;
use crate::synthworld::io::{corpus_container, parse_corpus};
use crate::synthworld::{Corpus, DetectorStub, Scene};

pub const ATTACKED_KIND: &str = "attacked-corpus";

/// Abort threshold on the fraction of scenes with a successful attack.
pub const MIN_SUCCESS_RATE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Miscategorize,
    Hide,
    Appear,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Miscategorize, AttackKind::Hide, AttackKind::Appear];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Miscategorize => "miscategorize",
            AttackKind::Hide => "hide",
            AttackKind::Appear => "appear",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Result<AttackKind, CodecError> {
        AttackKind::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| CodecError::Malformed(format!("attack kind {c}")))
    }
}

/// How attacks are drawn when building an attacked corpus: the goal kind
/// is fixed, targets and regions are sampled per scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackPlan {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub steps: usize,
    /// Defaults to `epsilon / steps · 2.5` (clamped to `epsilon`).
    #[serde(default)]
    pub step_size: Option<f64>,
    /// Fraction of coordinates the attacker may change, as one contiguous
    /// block at a random offset; 1.0 means all coordinates.
    #[serde(default = "full_fraction")]
    pub mask_fraction: f64,
    /// Attack attempts per scene before the scene is dropped.
    #[serde(default = "default_attempts")]
    pub attempts: usize,
}

fn full_fraction() -> f64 {
    1.0
}

fn default_attempts() -> usize {
    3
}

impl AttackPlan {
    pub fn step_size(&self) -> f64 {
        self.step_size
            .unwrap_or((2.5 * self.epsilon / self.steps.max(1) as f64).min(self.epsilon))
            .max(f64::MIN_POSITIVE)
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.epsilon >= 0.0) || self.steps == 0 || self.attempts == 0 {
            return Err(AttackError::Spec(
                "plan needs epsilon >= 0, steps >= 1, attempts >= 1".into(),
            ));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction <= 1.0) {
            return Err(AttackError::Spec(format!(
                "mask_fraction {} outside (0, 1]",
                self.mask_fraction
            )));
        }
        Ok(())
    }
}

/// What was done to one retained scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackAnnotation {
    pub scene_id: u64,
    pub kind: AttackKind,
    /// Goal label: target category, or background for hiding.
    pub target: usize,
    pub region: usize,
    pub object: Option<usize>,
    /// Perturbed proposals: the region-level positives of this scene.
    pub positives: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackStats {
    pub scenes: usize,
    pub attempts: usize,
    pub successes: usize,
    /// Scenes with nothing to attack (no object or no background region).
    pub no_candidate: usize,
}

impl AttackStats {
    pub fn scene_success_rate(&self) -> f64 {
        self.successes as f64 / (self.scenes - self.no_candidate).max(1) as f64
    }
}

/// Attacked scenes, one successful attack each, with region labels.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackedCorpus {
    pub corpus: Corpus,
    pub annotations: Vec<AttackAnnotation>,
    pub stats: AttackStats,
}

impl AttackedCorpus {
    /// Per proposal of retained scene `s`: is it perturbed.
    pub fn labels(&self, s: usize) -> Vec<bool> {
        let mut l = vec![false; self.corpus.scenes[s].proposals.len()];
        for &i in &self.annotations[s].positives {
            l[i] = true;
        }
        l
    }

    pub fn num_positives(&self) -> usize {
        self.annotations.iter().map(|a| a.positives.len()).sum()
    }
}

enum SceneResult {
    NoCandidate,
    Failed(usize),
    Success(usize, Scene, AttackAnnotation),
}

fn attack_scene(
    stub: &DetectorStub,
    scene: &Scene,
    plan: &AttackPlan,
    cutoff: f64,
    seed: u64,
) -> Result<SceneResult, AttackError> {
    let mut rng = rngs::stream(seed, &[0xa7, scene.id]);
    let background = stub.background();
    let categories = background;
    let dim = stub.dim();
    for attempt in 0..plan.attempts {
        let (region, goal) = match plan.kind {
            AttackKind::Miscategorize | AttackKind::Hide => {
                if scene.objects.is_empty() {
                    return Ok(SceneResult::NoCandidate);
                }
                let o = rng.random_range(0..scene.objects.len());
                let regions: Vec<usize> = scene.proposals_of(o).collect();
                let region = *regions.choose(&mut rng).expect("objects have proposals");
                let goal = if plan.kind == AttackKind::Hide {
                    AttackGoal::Hide
                } else {
                    let truth = scene.objects[o].category;
                    let mut t = rng.random_range(0..categories - 1);
                    if t >= truth {
                        t += 1;
                    }
                    AttackGoal::Miscategorize(t)
                };
                (region, goal)
            }
            AttackKind::Appear => {
                let bg: Vec<usize> = scene.background_proposals().collect();
                let Some(&region) = bg.choose(&mut rng) else {
                    return Ok(SceneResult::NoCandidate);
                };
                (region, AttackGoal::Appear(rng.random_range(0..categories)))
            }
        };
        let mask = if plan.mask_fraction >= 1.0 {
            CoordMask::Full
        } else {
            CoordMask::random_block(dim, plan.mask_fraction, &mut rng)
        };
        let spec = AttackSpec {
            goal,
            epsilon: plan.epsilon,
            steps: plan.steps,
            step_size: plan.step_size(),
            mask,
        };
        let out = attack_region(stub, scene, region, &spec, cutoff)?;
        if out.success {
            let target = match goal {
                AttackGoal::Miscategorize(t) | AttackGoal::Appear(t) => t,
                AttackGoal::Hide => background,
            };
            let annotation = AttackAnnotation {
                scene_id: scene.id,
                kind: plan.kind,
                target,
                region,
                object: scene.proposals[region].object,
                positives: out.perturbed,
            };
            return Ok(SceneResult::Success(attempt + 1, out.scene, annotation));
        }
        log::trace!("scene {}: attempt {} failed", scene.id, attempt + 1);
    }
    Ok(SceneResult::Failed(plan.attempts))
}

/// Attack every scene of `corpus` under `plan` and keep the scenes with a
/// successful attack.
pub fn build_attacked_corpus(
    corpus: &Corpus,
    stub: &DetectorStub,
    plan: &AttackPlan,
    seed: u64,
) -> Result<AttackedCorpus, AttackError> {
    plan.validate()?;
    let cutoff = corpus.config.acceptance_cutoff;
    let results = par::try_map(&corpus.scenes, |s| attack_scene(stub, s, plan, cutoff, seed))?;
    let mut stats = AttackStats {
        scenes: corpus.scenes.len(),
        ..Default::default()
    };
    let mut scenes = Vec::new();
    let mut annotations = Vec::new();
    for r in results {
        match r {
            SceneResult::NoCandidate => stats.no_candidate += 1,
            SceneResult::Failed(n) => stats.attempts += n,
            SceneResult::Success(n, s, a) => {
                stats.attempts += n;
                stats.successes += 1;
                scenes.push(s);
                annotations.push(a);
            }
        }
    }
    let rate = stats.scene_success_rate();
    log::info!(
        "{} attacks: {}/{} scenes attacked successfully ({} attempts, {} without candidate)",
        plan.kind.name(),
        stats.successes,
        stats.scenes,
        stats.attempts,
        stats.no_candidate
    );
    if rate < MIN_SUCCESS_RATE {
        return Err(AttackError::LowSuccess {
            kind: plan.kind.name(),
            rate,
            epsilon: plan.epsilon,
            steps: plan.steps,
        });
    }
    Ok(AttackedCorpus {
        corpus: Corpus {
            config: corpus.config.clone(),
            seed: corpus.seed,
            scenes,
        },
        annotations,
        stats,
    })
}

fn encode(a: &AttackedCorpus) -> Container {
    corpus_container(ATTACKED_KIND, &a.corpus, |w| {
        w.u64(a.annotations.len() as u64);
        for n in &a.annotations {
            w.u64(n.scene_id);
            w.u8(n.kind.code());
            w.u32(n.target as u32);
            w.u32(n.region as u32);
            w.u32(n.object.map_or(u32::MAX, |o| o as u32));
            w.u32(n.positives.len() as u32);
            for &p in &n.positives {
                w.u32(p as u32);
            }
        }
        for v in [
            a.stats.scenes,
            a.stats.attempts,
            a.stats.successes,
            a.stats.no_candidate,
        ] {
            w.u64(v as u64);
        }
    })
}

fn decode_annotations(
    r: &mut ByteReader,
    scenes: &[Scene],
) -> Result<(Vec<AttackAnnotation>, AttackStats), CodecError> {
    let n = r.u64("annotation count")? as usize;
    if n != scenes.len() {
        return Err(CodecError::Malformed(format!(
            "{n} annotations for {} scenes",
            scenes.len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for scene in scenes {
        let scene_id = r.u64("scene id")?;
        if scene_id != scene.id {
            return Err(CodecError::Malformed(format!(
                "annotation for scene {scene_id} out of order"
            )));
        }
        let kind = AttackKind::from_code(r.u8("attack kind")?)?;
        let target = r.u32("target")? as usize;
        let region = r.u32("region")? as usize;
        let object = match r.u32("object")? {
            u32::MAX => None,
            o => Some(o as usize),
        };
        let k = r.u32("positive count")? as usize;
        let positives = (0..k)
            .map(|_| r.u32("positive").map(|p| p as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if region >= scene.proposals.len() || positives.iter().any(|&p| p >= scene.proposals.len()) {
            return Err(CodecError::Malformed(format!(
                "scene {scene_id}: region index out of range"
            )));
        }
        out.push(AttackAnnotation {
            scene_id,
            kind,
            target,
            region,
            object,
            positives,
        });
    }
    let mut v = [0usize; 4];
    for x in &mut v {
        *x = r.u64("stats")? as usize;
    }
    if r.remaining() != 0 {
        return Err(CodecError::Malformed("trailing bytes after annotations".into()));
    }
    let stats = AttackStats {
        scenes: v[0],
        attempts: v[1],
        successes: v[2],
        no_candidate: v[3],
    };
    Ok((out, stats))
}

pub fn encode_attacked(a: &AttackedCorpus) -> Vec<u8> {
    encode(a).encode()
}

pub fn save_attacked(a: &AttackedCorpus, path: &Path) -> Result<(), AttackError> {
    encode(a).write(path)?;
    Ok(())
}

pub fn load_attacked(path: &Path) -> Result<AttackedCorpus, AttackError> {
    let container = Container::read(path, ATTACKED_KIND)?;
    let (corpus, mut r) = parse_corpus(&container)?;
    let (annotations, stats) = decode_annotations(&mut r, &corpus.scenes)?;
    Ok(AttackedCorpus {
        corpus,
        annotations,
        stats,
    })
}
