use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ScemeError, ScemeModel};
use crate::numkit::{
    attention_backward, attention_weights, cross_entropy_with_logits, gru_backward, gru_step, smooth_l1,
    smooth_l1_grad, GruCache, DEFAULT_SMOOTH_L1_ALPHA,
};
use crate::rngs;
use crate::synthworld::{BBox, Scene};

/// Number of vectors in a context profile.
pub const PROFILE_BLOCKS: usize = 5;

/// `[r, γu1, γu2, γr1, γr2]` of one region: initial node features followed by
/// the update and reset gates of the region GRU (1) and scene GRU (2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextProfile {
    pub scene_id: u64,
    pub region: usize,
    /// Category the detector assigned to this region.
    pub predicted: usize,
    pub values: Vec<f64>,
}

impl ContextProfile {
    pub fn dim(&self) -> usize {
        self.values.len() / PROFILE_BLOCKS
    }

    pub fn block(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.values[k * d..(k + 1) * d]
    }

    pub fn node(&self) -> &[f64] {
        self.block(0)
    }

    pub fn gates(&self) -> &[f64] {
        &self.values[self.dim()..]
    }
}

/// Geometry/appearance encoding used for attention queries and keys:
/// `(cx, cy, ln w, ln h, confidence, cx² + cy²)` followed by the model's
/// linear appearance projection of `features`.
pub fn geometry_encoding(model: &ScemeModel, bbox: &BBox, confidence: f64, features: &[f64]) -> Vec<f64> {
    let mut g = Vec::with_capacity(model.config.encoding_dim());
    g.extend_from_slice(&[
        bbox.cx,
        bbox.cy,
        bbox.w.ln(),
        bbox.h.ln(),
        confidence,
        bbox.cx * bbox.cx + bbox.cy * bbox.cy,
    ]);
    g.extend(model.appearance.matvec(features));
    g
}

struct RoundCache {
    inputs: Vec<Vec<f64>>,
    encodings: Vec<Vec<f64>>,
    queries: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    /// Per region: neighbor attention weights, neighbors in index order
    /// skipping self.
    weights: Vec<Vec<f64>>,
    region: Vec<GruCache>,
    scene: Vec<GruCache>,
}

/// Forward trace of one scene, kept for backprop.
pub struct PassTrace {
    rounds: Vec<RoundCache>,
    /// `r'` per region after the last round.
    pub updated: Vec<Vec<f64>>,
    /// Last-round gates per region: `[γu1, γu2, γr1, γr2]`.
    pub gates: Vec<[Vec<f64>; 4]>,
    /// Last-round attention weights per region over its neighbors.
    pub attention: Vec<Vec<f64>>,
}

/// Inverted-dropout mask per region for one scene.
pub fn dropout_mask(scene: &Scene, dim: usize, rate: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rngs::stream(seed, &[0xd20f, scene.id]);
    let keep = 1.0 / (1.0 - rate);
    scene
        .proposals
        .iter()
        .map(|_| {
            (0..dim)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        })
        .collect()
}

fn check_scene(model: &ScemeModel, scene: &Scene) -> Result<(), ScemeError> {
    let d = model.config.feature_dim;
    if scene.proposals.is_empty() {
        return Err(ScemeError::EmptyScene(scene.id));
    }
    if scene.scene_features.len() != d || scene.proposals.iter().any(|p| p.features.len() != d) {
        return Err(ScemeError::Dimension {
            scene: scene.id,
            expected: d,
        });
    }
    Ok(())
}

/// Run message passing over one scene. `mask` multiplies the initial node
/// features (dropout); `None` means no dropout.
pub fn forward(model: &ScemeModel, scene: &Scene, mask: Option<&[Vec<f64>]>) -> Result<PassTrace, ScemeError> {
    check_scene(model, scene)?;
    let n = scene.proposals.len();
    let d = model.config.feature_dim;
    let inv_temp = 1.0 / model.config.attention_temperature;

    let mut current: Vec<Vec<f64>> = scene
        .proposals
        .iter()
        .enumerate()
        .map(|(i, p)| match mask {
            Some(m) => p.features.iter().zip(&m[i]).map(|(x, k)| x * k).collect(),
            None => p.features.clone(),
        })
        .collect();

    let mut rounds = Vec::with_capacity(model.config.rounds);
    let mut gates = Vec::new();
    let mut attention = Vec::new();
    for _ in 0..model.config.rounds {
        let encodings: Vec<Vec<f64>> = scene
            .proposals
            .iter()
            .zip(&current)
            .map(|(p, x)| geometry_encoding(model, &p.bbox, p.pred_confidence, x))
            .collect();
        let queries: Vec<Vec<f64>> = encodings
            .iter()
            .map(|g| {
                let mut q = model.query_bias.as_slice().to_vec();
                model.query.matvec_acc(g, &mut q);
                q
            })
            .collect();
        let keys: Vec<Vec<f64>> = encodings
            .iter()
            .map(|g| {
                let mut k = model.key_bias.as_slice().to_vec();
                model.key.matvec_acc(g, &mut k);
                k
            })
            .collect();

        let mut weights = Vec::with_capacity(n);
        let mut region = Vec::with_capacity(n);
        let mut scene_caches = Vec::with_capacity(n);
        let mut next = Vec::with_capacity(n);
        gates.clear();
        for i in 0..n {
            let mut message = vec![0.0; d];
            let w = if n > 1 {
                let q: Vec<f64> = queries[i].iter().map(|x| x * inv_temp).collect();
                let neighbor_keys: Vec<&[f64]> = (0..n).filter(|&j| j != i).map(|j| keys[j].as_slice()).collect();
                let w = attention_weights(&q, &neighbor_keys)?;
                for (wj, j) in w.iter().zip((0..n).filter(|&j| j != i)) {
                    for (m, x) in message.iter_mut().zip(&current[j]) {
                        *m += wj * x;
                    }
                }
                w
            } else {
                Vec::new()
            };
            let (ro, rc) = gru_step(&current[i], &message, &model.region_gru)?;
            let (so, sc) = gru_step(&current[i], &scene.scene_features, &model.scene_gru)?;
            next.push(
                ro.next
                    .iter()
                    .zip(&so.next)
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect::<Vec<f64>>(),
            );
            gates.push([ro.gamma_update, so.gamma_update, ro.gamma_reset, so.gamma_reset]);
            weights.push(w);
            region.push(rc);
            scene_caches.push(sc);
        }
        attention = weights.clone();
        rounds.push(RoundCache {
            inputs: std::mem::replace(&mut current, next),
            encodings,
            queries,
            keys,
            weights,
            region,
            scene: scene_caches,
        });
    }

    Ok(PassTrace {
        rounds,
        updated: current,
        gates,
        attention,
    })
}

/// Backprop from `∂L/∂r'` through all rounds into `grads`.
pub fn backward(model: &ScemeModel, trace: &PassTrace, d_updated: Vec<Vec<f64>>, grads: &mut ScemeModel) {
    let d = model.config.feature_dim;
    let g_dim = model.config.encoding_dim();
    let a_dim = model.config.appearance_dim;
    let scale = 1.0 / ((model.config.attention_dim as f64).sqrt() * model.config.attention_temperature);
    let mut d_out = d_updated;

    for round in trace.rounds.iter().rev() {
        let n = round.inputs.len();
        let mut d_inputs = vec![vec![0.0; d]; n];
        let mut d_queries = vec![vec![0.0; model.config.attention_dim]; n];
        let mut d_keys = vec![vec![0.0; model.config.attention_dim]; n];

        for i in 0..n {
            let half: Vec<f64> = d_out[i].iter().map(|x| 0.5 * x).collect();
            let (dr_region, d_message) =
                gru_backward(&round.region[i], &model.region_gru, &half, &mut grads.region_gru);
            let (dr_scene, _) = gru_backward(&round.scene[i], &model.scene_gru, &half, &mut grads.scene_gru);
            for k in 0..d {
                d_inputs[i][k] += dr_region[k] + dr_scene[k];
            }
            if n == 1 {
                continue;
            }
            let w = &round.weights[i];
            let neighbors: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let mut d_w = Vec::with_capacity(w.len());
            for (wj, &j) in w.iter().zip(&neighbors) {
                let mut dot = 0.0;
                for k in 0..d {
                    d_inputs[j][k] += wj * d_message[k];
                    dot += d_message[k] * round.inputs[j][k];
                }
                d_w.push(dot);
            }
            let d_logits = attention_backward(w, &d_w);
            for (dl, &j) in d_logits.iter().zip(&neighbors) {
                let c = dl * scale;
                for k in 0..model.config.attention_dim {
                    d_queries[i][k] += c * round.keys[j][k];
                    d_keys[j][k] += c * round.queries[i][k];
                }
            }
        }

        if n > 1 {
            for i in 0..n {
                let g = &round.encodings[i];
                grads.query.add_outer(&d_queries[i], g);
                grads.key.add_outer(&d_keys[i], g);
                for k in 0..model.config.attention_dim {
                    grads.query_bias.as_mut_slice()[k] += d_queries[i][k];
                    grads.key_bias.as_mut_slice()[k] += d_keys[i][k];
                }
                let mut d_enc = vec![0.0; g_dim];
                model.query.matvec_t_acc(&d_queries[i], &mut d_enc);
                model.key.matvec_t_acc(&d_keys[i], &mut d_enc);
                let d_app = &d_enc[g_dim - a_dim..];
                grads.appearance.add_outer(d_app, &round.inputs[i]);
                model.appearance.matvec_t_acc(d_app, &mut d_inputs[i]);
            }
        }
        d_out = d_inputs;
    }
}

/// Weight of the box-regression term in the detection objective.
pub const BOX_LOSS_WEIGHT: f64 = 1.0;

/// Detection objective of one scene: mean cross-entropy of the classifier
/// on `r'` plus mean SmoothL1 box refinement over foreground regions.
/// Accumulates the full gradient into `grads` when given.
pub fn scene_objective(
    model: &ScemeModel,
    scene: &Scene,
    mask: Option<&[Vec<f64>]>,
    grads: Option<&mut ScemeModel>,
) -> Result<f64, ScemeError> {
    let trace = forward(model, scene, mask)?;
    let n = scene.proposals.len();
    let d = model.config.feature_dim;
    let background = model.config.num_labels - 1;
    let fg = scene.proposals.iter().filter(|p| p.object.is_some()).count();

    let mut loss = 0.0;
    let mut d_updated = vec![vec![0.0; d]; n];
    let mut head = model.zeros_like();
    for (i, p) in scene.proposals.iter().enumerate() {
        let r = &trace.updated[i];
        let mut logits = model.cls_bias.as_slice().to_vec();
        model.cls_weight.matvec_acc(r, &mut logits);
        let label = p.gt_label.min(background);
        let (ce, mut d_logits) = cross_entropy_with_logits(&logits, label);
        loss += ce / n as f64;
        d_logits.iter_mut().for_each(|x| *x /= n as f64);
        head.cls_weight.add_outer(&d_logits, r);
        for (b, g) in head.cls_bias.as_mut_slice().iter_mut().zip(&d_logits) {
            *b += g;
        }
        model.cls_weight.matvec_t_acc(&d_logits, &mut d_updated[i]);

        if let Some(o) = p.object {
            let target = p.bbox.deltas_to(&scene.objects[o].bbox);
            let mut pred = model.reg_bias.as_slice().to_vec();
            model.reg_weight.matvec_acc(r, &mut pred);
            let w = BOX_LOSS_WEIGHT / fg as f64;
            loss += w * smooth_l1(&pred, &target, DEFAULT_SMOOTH_L1_ALPHA)?;
            let d_pred: Vec<f64> = smooth_l1_grad(&pred, &target, DEFAULT_SMOOTH_L1_ALPHA)
                .into_iter()
                .map(|g| g * w)
                .collect();
            head.reg_weight.add_outer(&d_pred, r);
            for (b, g) in head.reg_bias.as_mut_slice().iter_mut().zip(&d_pred) {
                *b += g;
            }
            model.reg_weight.matvec_t_acc(&d_pred, &mut d_updated[i]);
        }
    }

    if let Some(grads) = grads {
        grads.cls_weight.add_assign(&head.cls_weight);
        grads.cls_bias.add_assign(&head.cls_bias);
        grads.reg_weight.add_assign(&head.reg_weight);
        grads.reg_bias.add_assign(&head.reg_bias);
        backward(model, &trace, d_updated, grads);
    }
    Ok(loss)
}

/// Per-region message-passing result.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionContext {
    pub updated: Vec<f64>,
    pub profile: ContextProfile,
}

/// Update every region of `scene` by one pass of the context model and
/// record its context profile. With `dropout_on`, node features are dropped
/// with the model's training rate using a mask drawn from `seed`; profiles
/// always record the undropped features.
pub fn message_pass(
    model: &ScemeModel,
    scene: &Scene,
    dropout_on: bool,
    seed: u64,
) -> Result<Vec<RegionContext>, ScemeError> {
    let mask = (dropout_on && model.config.dropout > 0.0)
        .then(|| dropout_mask(scene, model.config.feature_dim, model.config.dropout, seed));
    let trace = forward(model, scene, mask.as_deref())?;
    Ok(trace
        .updated
        .into_iter()
        .zip(trace.gates)
        .enumerate()
        .map(|(i, (updated, [gu1, gu2, gr1, gr2]))| {
            let p = &scene.proposals[i];
            let mut values = Vec::with_capacity(PROFILE_BLOCKS * p.features.len());
            values.extend_from_slice(&p.features);
            values.extend(gu1);
            values.extend(gu2);
            values.extend(gr1);
            values.extend(gr2);
            RegionContext {
                updated,
                profile: ContextProfile {
                    scene_id: scene.id,
                    region: i,
                    predicted: p.pred_label,
                    values,
                },
            }
        })
        .collect())
}

/// Classifier head applied to an updated feature vector.
pub fn classify(model: &ScemeModel, updated: &[f64]) -> usize {
    let mut logits = model.cls_bias.as_slice().to_vec();
    model.cls_weight.matvec_acc(updated, &mut logits);
    let mut best = 0;
    for k in 1..logits.len() {
        if logits[k] > logits[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{grad_check, gru_step, ParamSet};
    use crate::sceme::ScemeConfig;
    use crate::synthworld::{RegionProposal, SceneObject};
    use rand::Rng;

    fn config(d: usize, rounds: usize) -> ScemeConfig {
        ScemeConfig {
            feature_dim: d,
            num_labels: 3,
            attention_dim: 4,
            appearance_dim: 3,
            rounds,
            ..Default::default()
        }
    }

    fn toy_scene(n: usize, d: usize, seed: u64) -> Scene {
        let mut rng = rngs::stream(seed, &[]);
        let objects = vec![SceneObject {
            category: 0,
            bbox: BBox::new(0.4, 0.5, 0.2, 0.3),
        }];
        let proposals = (0..n)
            .map(|i| {
                let fg = i % 2 == 0;
                RegionProposal {
                    bbox: BBox::new(
                        rng.random_range(0.2..0.8),
                        rng.random_range(0.2..0.8),
                        rng.random_range(0.1..0.3),
                        rng.random_range(0.1..0.3),
                    ),
                    features: (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
                    gt_label: if fg { 0 } else { 2 },
                    pred_label: if fg { 0 } else { 2 },
                    pred_confidence: rng.random_range(0.3..1.0),
                    object: fg.then_some(0),
                }
            })
            .collect();
        Scene {
            id: seed,
            objects,
            proposals,
            scene_features: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn single_proposal_uses_zero_message() {
        let model = ScemeModel::init(config(5, 1), 3);
        let scene = toy_scene(1, 5, 9);
        let out = message_pass(&model, &scene, false, 0).unwrap();
        assert_eq!(out.len(), 1);
        let r = &scene.proposals[0].features;
        let (region, _) = gru_step(r, &[0.0; 5], &model.region_gru).unwrap();
        let (sc, _) = gru_step(r, &scene.scene_features, &model.scene_gru).unwrap();
        for k in 0..5 {
            assert!((out[0].updated[k] - 0.5 * (region.next[k] + sc.next[k])).abs() < 1e-12);
        }
        assert!(out[0].profile.values.iter().all(|x| x.is_finite()));
        assert!(out[0].profile.gates().iter().all(|&g| g > 0.0 && g < 1.0));
    }

    #[test]
    fn identical_pair_attends_fully_and_matches() {
        let model = ScemeModel::init(config(4, 1), 1);
        let mut scene = toy_scene(2, 4, 2);
        scene.proposals[1] = scene.proposals[0].clone();
        let trace = forward(&model, &scene, None).unwrap();
        assert_eq!(trace.attention, vec![vec![1.0], vec![1.0]]);
        let out = message_pass(&model, &scene, false, 0).unwrap();
        assert_eq!(out[0].profile.values, out[1].profile.values);
        assert_eq!(out[0].updated, out[1].updated);
    }

    #[test]
    fn three_regions_match_stepwise_recomputation() {
        let cfg = config(4, 1);
        let model = ScemeModel::init(cfg.clone(), 8);
        let scene = toy_scene(3, 4, 4);
        let out = message_pass(&model, &scene, false, 0).unwrap();

        let enc: Vec<Vec<f64>> = scene
            .proposals
            .iter()
            .map(|p| {
                let b = &p.bbox;
                let mut g = vec![
                    b.cx,
                    b.cy,
                    b.w.ln(),
                    b.h.ln(),
                    p.pred_confidence,
                    b.cx * b.cx + b.cy * b.cy,
                ];
                for a in 0..cfg.appearance_dim {
                    g.push((0..4).map(|k| model.appearance.get(a, k) * p.features[k]).sum());
                }
                g
            })
            .collect();
        let project = |w: &crate::numkit::Mat, b: &crate::numkit::Mat, g: &[f64]| -> Vec<f64> {
            (0..cfg.attention_dim)
                .map(|a| b.get(a, 0) + (0..g.len()).map(|k| w.get(a, k) * g[k]).sum::<f64>())
                .collect()
        };
        let q: Vec<_> = enc
            .iter()
            .map(|g| project(&model.query, &model.query_bias, g))
            .collect();
        let k: Vec<_> = enc.iter().map(|g| project(&model.key, &model.key_bias, g)).collect();
        for i in 0..3 {
            let js: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            let logits: Vec<f64> = js
                .iter()
                .map(|&j| (0..cfg.attention_dim).map(|a| q[i][a] * k[j][a]).sum::<f64>() / 2.0)
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let mut v = vec![0.0; 4];
            for (l, &j) in logits.iter().zip(&js) {
                for (x, f) in v.iter_mut().zip(&scene.proposals[j].features) {
                    *x += l.exp() / z * f;
                }
            }
            let r = &scene.proposals[i].features;
            let (a, _) = gru_step(r, &v, &model.region_gru).unwrap();
            let (b, _) = gru_step(r, &scene.scene_features, &model.scene_gru).unwrap();
            for c in 0..4 {
                assert!((out[i].updated[c] - 0.5 * (a.next[c] + b.next[c])).abs() < 1e-12);
            }
            let p = &out[i].profile;
            let expected = [&a.gamma_update, &b.gamma_update, &a.gamma_reset, &b.gamma_reset];
            for (blk, want) in expected.into_iter().enumerate() {
                for (x, y) in p.block(blk + 1).iter().zip(want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    fn check_objective_gradient(rounds: usize, dropout: bool) {
        let cfg = config(4, rounds);
        let model = ScemeModel::init(cfg, 5);
        let scene = toy_scene(4, 4, 6);
        let mask = dropout.then(|| dropout_mask(&scene, 4, 0.3, 11));
        let mut grads = model.zeros_like();
        scene_objective(&model, &scene, mask.as_deref(), Some(&mut grads)).unwrap();
        let flat = model.flatten();
        let mut probe = model.clone();
        let check = grad_check(
            |p| {
                probe.assign_flat(p).unwrap();
                scene_objective(&probe, &scene, mask.as_deref(), None).unwrap()
            },
            &flat,
            &grads.flatten(),
            1e-6,
        )
        .unwrap();
        assert!(check.passes(1e-4), "{rounds} rounds: {check:?}");
    }

    #[test]
    fn objective_gradient_one_round() {
        check_objective_gradient(1, false);
    }

    #[test]
    fn objective_gradient_two_rounds_with_dropout() {
        check_objective_gradient(2, true);
    }

    #[test]
    fn dropout_changes_update_but_not_profile_nodes() {
        let model = ScemeModel::init(config(4, 1), 2);
        let scene = toy_scene(3, 4, 3);
        let off = message_pass(&model, &scene, false, 0).unwrap();
        let on = message_pass(&model, &scene, true, 17).unwrap();
        for (a, b) in off.iter().zip(&on) {
            assert_eq!(a.profile.node(), b.profile.node());
        }
        assert_ne!(off, on);
    }
}
