use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::synthworld::{detect_second_stage, DetectorStub, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "goal", content = "target", rename_all = "snake_case")]
pub enum AttackGoal {
    /// Make an object's regions read as category `target`.
    Miscategorize(usize),
    /// Make an object's regions read as background or fall below the
    /// acceptance cutoff.
    Hide,
    /// Make a background region read as category `target`.
    Appear(usize),
}

/// Which feature coordinates an attack may change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoordMask {
    Full,
    /// Coordinates `start .. start + len`.
    Block {
        start: usize,
        len: usize,
    },
}

impl CoordMask {
    pub fn allows(&self, k: usize) -> bool {
        match *self {
            CoordMask::Full => true,
            CoordMask::Block { start, len } => k >= start && k < start + len,
        }
    }

    /// A contiguous block covering `fraction` of `dim` coordinates at a
    /// random offset.
    pub fn random_block<R: Rng + ?Sized>(dim: usize, fraction: f64, rng: &mut R) -> CoordMask {
        let len = ((dim as f64 * fraction).round() as usize).clamp(1, dim);
        CoordMask::Block {
            start: rng.random_range(0..=dim - len),
            len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub goal: AttackGoal,
    /// L∞ budget in feature units.
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub mask: CoordMask,
}

impl AttackSpec {
    /// One-step sign attack spending the whole budget.
    pub fn fgsm(goal: AttackGoal, epsilon: f64, mask: CoordMask) -> AttackSpec {
        AttackSpec {
            goal,
            epsilon,
            steps: 1,
            step_size: epsilon.max(f64::MIN_POSITIVE),
            mask,
        }
    }

    pub fn validate(&self, stub: &DetectorStub) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::Spec(m));
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon {} must be finite and non-negative", self.epsilon));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive".into());
        }
        if let CoordMask::Block { start, len } = self.mask {
            if len == 0 || start + len > stub.dim() {
                return bad(format!("mask block {start}+{len} outside {} coordinates", stub.dim()));
            }
        }
        match self.goal {
            AttackGoal::Miscategorize(t) | AttackGoal::Appear(t) if t >= stub.background() => {
                bad(format!("target {t} is not an object category"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    pub scene: Scene,
    pub success: bool,
    /// Proposals that received the perturbation.
    pub perturbed: Vec<usize>,
    pub delta: Vec<f64>,
}

/// `∂/∂r` of `−log softmax(W r + b)[target]`, accumulated into `out`.
fn nll_grad(stub: &DetectorStub, r: &[f64], target: usize, out: &mut [f64]) {
    let mut p = stub.probabilities(r);
    p[target] -= 1.0;
    stub.weights.matvec_t_acc(&p, out);
}

/// Attack one region of `scene`. Miscategorization and hiding perturb every
/// proposal of the targeted region's object with one shared perturbation;
/// appearing perturbs the targeted background region alone.
pub fn attack_region(
    stub: &DetectorStub,
    scene: &Scene,
    region: usize,
    spec: &AttackSpec,
    acceptance_cutoff: f64,
) -> Result<AttackOutcome, AttackError> {
    spec.validate(stub)?;
    let p = scene.proposals.get(region).ok_or(AttackError::Region {
        scene: scene.id,
        region,
        reason: "index out of range",
    })?;
    let background = stub.background();
    let (perturbed, target): (Vec<usize>, usize) = match spec.goal {
        AttackGoal::Miscategorize(t) => {
            let o = p.object.ok_or(AttackError::Region {
                scene: scene.id,
                region,
                reason: "miscategorization needs an object region",
            })?;
            if scene.objects[o].category == t {
                return Err(AttackError::Spec(format!("target {t} equals the ground truth")));
            }
            (scene.proposals_of(o).collect(), t)
        }
        AttackGoal::Hide => {
            let o = p.object.ok_or(AttackError::Region {
                scene: scene.id,
                region,
                reason: "hiding needs an object region",
            })?;
            (scene.proposals_of(o).collect(), background)
        }
        AttackGoal::Appear(t) => {
            if p.object.is_some() {
                return Err(AttackError::Region {
                    scene: scene.id,
                    region,
                    reason: "appearing needs a background region",
                });
            }
            (vec![region], t)
        }
    };

    let d = stub.dim();
    let mut delta = vec![0.0; d];
    let mut x = vec![0.0; d];
    for _ in 0..spec.steps {
        let mut g = vec![0.0; d];
        for &i in &perturbed {
            for (k, xk) in x.iter_mut().enumerate() {
                *xk = scene.proposals[i].features[k] + delta[k];
            }
            nll_grad(stub, &x, target, &mut g);
        }
        for k in 0..d {
            if !spec.mask.allows(k) {
                continue;
            }
            // descend the negative log-likelihood of the goal label
            let step = -spec.step_size * sign(g[k]);
            delta[k] = (delta[k] + step).clamp(-spec.epsilon, spec.epsilon);
        }
    }

    let mut out = scene.clone();
    for &i in &perturbed {
        let q = &mut out.proposals[i];
        for (k, x) in q.features.iter_mut().enumerate() {
            if spec.mask.allows(k) {
                *x += delta[k];
            }
        }
        let (label, conf) = detect_second_stage(stub, &q.features);
        q.pred_label = label;
        q.pred_confidence = conf;
    }

    let success = match spec.goal {
        AttackGoal::Miscategorize(t) => out.proposals[region].pred_label == t,
        AttackGoal::Hide => perturbed.iter().all(|&i| {
            let q = &out.proposals[i];
            q.pred_label == background || q.pred_confidence < acceptance_cutoff
        }),
        AttackGoal::Appear(t) => {
            let q = &out.proposals[region];
            q.pred_label == t && q.pred_confidence >= acceptance_cutoff
        }
    };
    Ok(AttackOutcome {
        scene: out,
        success,
        perturbed,
        delta,
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
