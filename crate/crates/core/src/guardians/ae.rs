use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{AeConfig, AeNet};
use super::GuardError;
use crate::codec::Container;
use crate::modelio::{decode_model, encode_model};
use crate::numkit::{
    smooth_l1, smooth_l1_grad, OptimKind, OptimizerState, ParamSet, Schedule, DEFAULT_SMOOTH_L1_ALPHA,
};
use crate::rngs;
use crate::sceme::{ContextProfile, PROFILE_BLOCKS};

pub const AE_KIND: &str = "profile-autoencoder";

/// Which parts of a context profile the autoencoder sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileFeatures {
    #[default]
    Full,
    /// Node features only; gate blocks are zeroed before encoding.
    NodeOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: u32,
    pub min_profiles: usize,
    /// Standardize each profile coordinate with training-set statistics.
    pub standardize: bool,
    pub features: ProfileFeatures,
    pub seed: u64,
}

impl Default for AeHyper {
    fn default() -> Self {
        AeHyper {
            epochs: 30,
            batch_size: 32,
            lr: 1e-4,
            plateau_factor: 0.5,
            plateau_patience: 3,
            min_profiles: 200,
            standardize: false,
            features: ProfileFeatures::Full,
            seed: 1,
        }
    }
}

/// Per-coordinate affine input normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

const MIN_STD: f64 = 1e-2;

impl Scaler {
    fn fit(rows: &[Vec<f64>]) -> Scaler {
        let n = rows.len() as f64;
        let dim = rows[0].len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let inv_std = var.iter().map(|v| 1.0 / v.sqrt().max(MIN_STD)).collect();
        Scaler { mean, inv_std }
    }

    fn apply(&self, x: &mut [f64]) {
        for ((x, m), s) in x.iter_mut().zip(&self.mean).zip(&self.inv_std) {
            *x = (*x - m) * s;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeMeta {
    pub category: usize,
    pub features: ProfileFeatures,
    pub trained: bool,
    pub net: AeConfig,
    pub scaler: Option<Scaler>,
}

/// Autoencoder over the context profiles of one predicted category.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoEncoder {
    pub meta: AeMeta,
    pub net: AeNet,
    /// Mean training loss before the first update, then after each epoch.
    pub loss_history: Vec<f64>,
}

impl AutoEncoder {
    pub fn category(&self) -> usize {
        self.meta.category
    }

    pub fn is_trained(&self) -> bool {
        self.meta.trained
    }

    /// The vector the network actually reconstructs.
    pub fn prepare(&self, values: &[f64]) -> Result<Vec<f64>, GuardError> {
        prepare(&self.meta, values)
    }

    /// Network output for a prepared input.
    pub fn reconstruct(&self, prepared: &[f64]) -> Vec<f64> {
        self.net.forward(prepared).0
    }

    pub fn save(&self, path: &Path) -> Result<(), GuardError> {
        encode_model(AE_KIND, &self.meta, &self.net).write(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AutoEncoder, GuardError> {
        let container = Container::read(path, AE_KIND)?;
        let (meta, net) = decode_model(&container, |m: &AeMeta| {
            m.net.validate()?;
            Ok(AeNet::zeros(m.net.clone()))
        })?;
        Ok(AutoEncoder {
            meta,
            net,
            loss_history: Vec::new(),
        })
    }
}

fn prepare(meta: &AeMeta, values: &[f64]) -> Result<Vec<f64>, GuardError> {
    let expected = PROFILE_BLOCKS * meta.net.dim;
    if values.len() != expected {
        return Err(GuardError::Shape {
            expected,
            got: values.len(),
        });
    }
    let mut x = values.to_vec();
    if meta.features == ProfileFeatures::NodeOnly {
        x[meta.net.dim..].iter_mut().for_each(|v| *v = 0.0);
    }
    if let Some(s) = &meta.scaler {
        s.apply(&mut x);
    }
    Ok(x)
}

/// SmoothL1 between the (prepared) profile and its reconstruction.
pub fn reconstruction_error(ae: &AutoEncoder, profile: &ContextProfile) -> Result<f64, GuardError> {
    let x = ae.prepare(&profile.values)?;
    let y = ae.reconstruct(&x);
    Ok(smooth_l1(&y, &x, DEFAULT_SMOOTH_L1_ALPHA)?)
}

/// Mean loss over `inputs` and, if `grads` is given, its gradient.
pub fn batch_loss(net: &AeNet, inputs: &[&[f64]], mut grads: Option<&mut AeNet>) -> f64 {
    let n = inputs.len() as f64;
    let mut loss = 0.0;
    for x in inputs {
        let (y, cache) = net.forward(x);
        loss += smooth_l1(&y, x, DEFAULT_SMOOTH_L1_ALPHA).expect("shapes fixed by config") / n;
        if let Some(g) = grads.as_deref_mut() {
            let d: Vec<f64> = smooth_l1_grad(&y, x, DEFAULT_SMOOTH_L1_ALPHA)
                .into_iter()
                .map(|v| v / n)
                .collect();
            net.backward(&cache, &d, g);
        }
    }
    loss
}

/// Train the autoencoder of `category` on its profiles.
pub fn train_autoencoder(
    category: usize,
    profiles: &[ContextProfile],
    config: AeConfig,
    hyper: &AeHyper,
) -> Result<AutoEncoder, GuardError> {
    config.validate().map_err(GuardError::Config)?;
    if profiles.len() < hyper.min_profiles || profiles.is_empty() {
        return Err(GuardError::Insufficient {
            category,
            count: profiles.len(),
            required: hyper.min_profiles.max(1),
        });
    }
    let mut meta = AeMeta {
        category,
        features: hyper.features,
        trained: false,
        net: config.clone(),
        scaler: None,
    };
    let raw = profiles
        .iter()
        .map(|p| prepare(&meta, &p.values))
        .collect::<Result<Vec<_>, _>>()?;
    if hyper.standardize {
        meta.scaler = Some(Scaler::fit(&raw));
    }
    let inputs = profiles
        .iter()
        .map(|p| prepare(&meta, &p.values))
        .collect::<Result<Vec<_>, _>>()?;
    let all: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();

    let mut net = AeNet::init(config, &mut rngs::stream(hyper.seed, &[0xae, category as u64]));
    let mut history = vec![batch_loss(&net, &all, None)];
    if hyper.epochs == 0 {
        return Ok(AutoEncoder {
            meta,
            net,
            loss_history: history,
        });
    }

    let mut opt = OptimizerState::new(
        OptimKind::adam(),
        hyper.lr,
        Schedule::Plateau {
            factor: hyper.plateau_factor,
            patience: hyper.plateau_patience,
        },
        net.num_params(),
    )?;
    let mut params = net.flatten();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let batch = hyper.batch_size.max(1);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rngs::stream(hyper.seed, &[0xae5, category as u64, epoch as u64]));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let mut g = AeNet::zeros(net.config.clone());
            let loss = batch_loss(&net, &xs, Some(&mut g));
            if !loss.is_finite() {
                return Err(GuardError::Diverged { category, epoch });
            }
            opt.step(&mut params, &g.flatten())?;
            net.assign_flat(&params)?;
            epoch_loss += loss * chunk.len() as f64;
        }
        let mean = epoch_loss / inputs.len() as f64;
        opt.end_epoch(mean);
        history.push(mean);
    }
    meta.trained = true;
    Ok(AutoEncoder {
        meta,
        net,
        loss_history: history,
    })
}
