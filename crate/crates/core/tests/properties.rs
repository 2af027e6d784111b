use std::sync::OnceLock;

use proptest::prelude::*;
use sceme::guardians::quantile_threshold;
use sceme::harness::{recall_at_fpr, roc_auc};
use sceme::redteam::{attack_region, AttackGoal, AttackSpec, CoordMask};
use sceme::sceme::{forward, message_pass, ScemeConfig, ScemeModel};
use sceme::synthworld::{Scene, World, WorldConfig};

fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| {
        World::new(WorldConfig {
            num_categories: 4,
            feature_dim: 12,
            prototype_scale: 2.5,
            ..Default::default()
        })
        .unwrap()
    })
}

fn model() -> &'static ScemeModel {
    static M: OnceLock<ScemeModel> = OnceLock::new();
    M.get_or_init(|| {
        ScemeModel::init(
            ScemeConfig {
                feature_dim: 12,
                num_labels: 5,
                attention_dim: 6,
                appearance_dim: 4,
                rounds: 2,
                ..Default::default()
            },
            9,
        )
    })
}

fn permuted(scene: &Scene, perm: &[usize]) -> Scene {
    let mut s = scene.clone();
    s.proposals = perm.iter().map(|&i| scene.proposals[i].clone()).collect();
    s
}

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut hits, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                hits += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    hits / pairs
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..200)
        .prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn context_profiles_follow_region_permutations(index in 0u64..1000, rot in 0usize..16) {
        let scene = world().generate_scene(5, index);
        let n = scene.proposals.len();
        let mut perm: Vec<usize> = (0..n).rev().collect();
        perm.rotate_left(rot % n);
        let base = message_pass(model(), &scene, false, 0).unwrap();
        let moved = message_pass(model(), &permuted(&scene, &perm), false, 0).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            let (a, b) = (&moved[k].profile.values, &base[i].profile.values);
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-9, "region {i}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn gates_are_open_interval_and_attention_normalizes(index in 0u64..1000) {
        let scene = world().generate_scene(6, index);
        let trace = forward(model(), &scene, None).unwrap();
        for gates in &trace.gates {
            for g in gates.iter().flatten() {
                prop_assert!(*g > 0.0 && *g < 1.0);
            }
        }
        for w in &trace.attention {
            if !w.is_empty() {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(w.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn perturbations_respect_budget_mask_and_isolation(
        index in 0u64..500,
        eps in 0.0f64..3.0,
        steps in 1usize..8,
        start in 0usize..12,
        len in 1usize..12,
    ) {
        let w = world();
        let scene = w.generate_scene(7, index);
        let region = scene.proposals.iter().position(|p| p.object.is_some()).unwrap();
        let mask = CoordMask::Block { start: start.min(12 - len), len };
        let spec = AttackSpec {
            goal: AttackGoal::Hide,
            epsilon: eps,
            steps,
            step_size: (2.5 * eps / steps as f64).min(eps),
            mask: mask.clone(),
        };
        let out = attack_region(&w.stub, &scene, region, &spec, 0.5).unwrap();
        prop_assert!(out.delta.iter().all(|d| d.abs() <= eps + 1e-12));
        for (i, (a, b)) in scene.proposals.iter().zip(&out.scene.proposals).enumerate() {
            let touched = out.perturbed.contains(&i);
            for k in 0..12 {
                let diff = b.features[k] - a.features[k];
                if !touched || !mask.allows(k) {
                    prop_assert_eq!(diff, 0.0);
                } else {
                    prop_assert!(diff.abs() <= eps + 1e-12);
                }
            }
            prop_assert_eq!(&a.bbox, &b.bbox);
        }
        prop_assert_eq!(&scene.scene_features, &out.scene.scene_features);
        prop_assert_eq!(&scene.objects, &out.scene.objects);
    }

    #[test]
    fn auc_equals_pairwise_oracle((scores, labels) in scored_labels()) {
        let (curve, auc) = roc_auc(&scores, &labels).unwrap();
        prop_assert_eq!(auc, pairwise_auc(&scores, &labels));
        prop_assert!((0.0..=1.0).contains(&auc));
        prop_assert!(curve.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
    }

    #[test]
    fn auc_ignores_sample_order((scores, labels) in scored_labels(), seed in any::<u64>()) {
        let n = scores.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let sc: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let lb: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(roc_auc(&sc, &lb).unwrap().1, roc_auc(&scores, &labels).unwrap().1);
    }

    #[test]
    fn recall_is_monotone_in_fpr((scores, labels) in scored_labels()) {
        let grid = [0.0, 0.001, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0];
        let r = recall_at_fpr(&scores, &labels, &grid).unwrap();
        prop_assert!(r.windows(2).all(|w| w[1].recall >= w[0].recall));
        prop_assert_eq!(r.last().unwrap().recall, 1.0);
    }

    #[test]
    fn calibrated_cutoff_bounds_benign_exceedances(
        errors in prop::collection::vec(0.0f64..10.0, 1..300),
        fpr in 0.0f64..1.0,
    ) {
        let t = quantile_threshold(&errors, fpr);
        let over = errors.iter().filter(|&&e| e > t).count();
        prop_assert!(over as f64 <= fpr * errors.len() as f64 + 1e-9);
    }
}
