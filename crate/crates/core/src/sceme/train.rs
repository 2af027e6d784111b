use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::message::{classify, dropout_mask, forward, message_pass, scene_objective, ContextProfile};
use super::{ScemeConfig, ScemeError, ScemeModel};
use crate::codec::Container;
use crate::modelio::{decode_model, encode_model};
use crate::numkit::{OptimKind, OptimizerState, ParamSet, Schedule};
use crate::par;
use crate::rngs;
use crate::synthworld::{detect_second_stage, Corpus, DetectorStub, Scene};

pub const SCEME_KIND: &str = "sceme-model";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScemeHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Learning-rate multiplier applied every `decay_every` optimizer steps.
    pub decay_factor: f64,
    pub decay_every: u64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for ScemeHyper {
    fn default() -> Self {
        ScemeHyper {
            epochs: 6,
            batch_size: 16,
            lr: 5e-4,
            momentum: 0.9,
            decay_factor: 0.1,
            decay_every: 100_000,
            clip_norm: 5.0,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedSceme {
    pub model: ScemeModel,
    /// Mean training objective per epoch.
    pub loss_history: Vec<f64>,
    pub steps: u64,
}

fn batch_gradient(model: &ScemeModel, scenes: &[&Scene], dropout_seed: u64) -> Result<(f64, Vec<f64>), ScemeError> {
    let rate = model.config.dropout;
    let d = model.config.feature_dim;
    let per_scene = par::map(scenes, |scene| {
        let mask = (rate > 0.0).then(|| dropout_mask(scene, d, rate, dropout_seed));
        let mut g = model.zeros_like();
        scene_objective(model, scene, mask.as_deref(), Some(&mut g)).map(|l| (l, g.flatten()))
    });
    let n = scenes.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.num_params()];
    for r in per_scene {
        let (l, g) = r?;
        loss += l / n;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b / n;
        }
    }
    Ok((loss, grad))
}

/// Train the context model and its heads on `corpus`. The stub is only
/// read; its parameters are never touched.
pub fn train_sceme(
    corpus: &Corpus,
    stub: &DetectorStub,
    config: ScemeConfig,
    hyper: &ScemeHyper,
) -> Result<TrainedSceme, ScemeError> {
    config.validate().map_err(ScemeError::Config)?;
    if corpus.scenes.is_empty() {
        return Err(ScemeError::EmptyCorpus);
    }
    if stub.dim() != config.feature_dim || stub.num_labels() != config.num_labels {
        return Err(ScemeError::Config(format!(
            "stub has dim {} and {} labels, model expects {} and {}",
            stub.dim(),
            stub.num_labels(),
            config.feature_dim,
            config.num_labels
        )));
    }
    let mut model = ScemeModel::init(config, hyper.seed);
    if hyper.epochs == 0 {
        return Ok(TrainedSceme {
            model,
            loss_history: Vec::new(),
            steps: 0,
        });
    }

    let mut opt = OptimizerState::new(
        OptimKind::Momentum {
            momentum: hyper.momentum,
        },
        hyper.lr,
        Schedule::StepDecay {
            factor: hyper.decay_factor,
            interval: hyper.decay_every.max(1),
        },
        model.num_params(),
    )?;
    let batch = hyper.batch_size.max(1);
    let mut order: Vec<usize> = (0..corpus.scenes.len()).collect();
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut params = model.flatten();

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rngs::stream(hyper.seed, &[0x0e0c, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let scenes: Vec<&Scene> = chunk.iter().map(|&i| &corpus.scenes[i]).collect();
            let dropout_seed = rngs::derive(hyper.seed, &[0xd0, epoch as u64, b as u64]);
            let (loss, mut grad) = batch_gradient(&model, &scenes, dropout_seed)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ScemeError::Diverged {
                    seed: hyper.seed,
                    epoch,
                    step: opt.steps(),
                });
            }
            if hyper.clip_norm > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > hyper.clip_norm {
                    let k = hyper.clip_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
            }
            opt.step(&mut params, &grad)?;
            model.assign_flat(&params)?;
            epoch_loss += loss * chunk.len() as f64;
        }
        let mean = epoch_loss / corpus.scenes.len() as f64;
        log::debug!("sceme epoch {epoch}: loss {mean:.5}, lr {:.2e}", opt.lr());
        history.push(mean);
    }

    Ok(TrainedSceme {
        model,
        loss_history: history,
        steps: opt.steps(),
    })
}

/// Fraction of proposals whose classifier output on `r'` equals the ground
/// truth label, with dropout off.
pub fn clean_accuracy(model: &ScemeModel, corpus: &Corpus) -> Result<f64, ScemeError> {
    let per_scene = par::try_map(&corpus.scenes, |scene| {
        let trace = forward(model, scene, None)?;
        Ok::<_, ScemeError>(
            trace
                .updated
                .iter()
                .zip(&scene.proposals)
                .filter(|(r, p)| classify(model, r) == p.gt_label)
                .count(),
        )
    })?;
    let total = corpus.num_proposals();
    Ok(per_scene.into_iter().sum::<usize>() as f64 / total.max(1) as f64)
}

/// Context profiles keyed by the stub's predicted category.
pub type ProfileGroups = BTreeMap<usize, Vec<ContextProfile>>;

/// Run message passing with dropout off over every scene and group each
/// region's profile under the category the stub predicts for it now.
pub fn extract_context_profiles(
    model: &ScemeModel,
    corpus: &Corpus,
    stub: &DetectorStub,
) -> Result<ProfileGroups, ScemeError> {
    let per_scene = par::try_map(&corpus.scenes, |scene| {
        message_pass(model, scene, false, 0).map(|ctx| {
            ctx.into_iter()
                .map(|c| {
                    let mut profile = c.profile;
                    profile.predicted =
                        detect_second_stage(stub, scene.proposals[profile.region].features.as_slice()).0;
                    profile
                })
                .collect::<Vec<_>>()
        })
    })?;
    let mut groups = ProfileGroups::new();
    for profile in per_scene.into_iter().flatten() {
        groups.entry(profile.predicted).or_default().push(profile);
    }
    Ok(groups)
}

pub fn save_sceme(model: &ScemeModel, path: &Path) -> Result<(), ScemeError> {
    encode_model(SCEME_KIND, &model.config, model).write(path)?;
    Ok(())
}

pub fn load_sceme(path: &Path) -> Result<ScemeModel, ScemeError> {
    let container = Container::read(path, SCEME_KIND)?;
    let (_, model) = decode_model(&container, |c: &ScemeConfig| {
        c.validate()?;
        Ok(ScemeModel::zeros(c.clone()))
    })?;
    Ok(model)
}
