use rand::Rng;
use sceme::redteam::{
    attack_region, build_attacked_corpus, encode_attacked, load_attacked, save_attacked, AttackGoal, AttackKind,
    AttackPlan, AttackSpec, CoordMask,
};
use sceme::rngs;
use sceme::synthworld::{detect_second_stage, Corpus, World, WorldConfig};

fn world() -> World {
    World::new(WorldConfig {
        signature_scale: 2.0,
        ..Default::default()
    })
    .unwrap()
}

fn ifgsm(goal: AttackGoal, epsilon: f64, steps: usize) -> AttackSpec {
    AttackSpec {
        goal,
        epsilon,
        steps,
        step_size: (2.5 * epsilon / steps as f64).min(epsilon).max(f64::MIN_POSITIVE),
        mask: CoordMask::Full,
    }
}

/// Miscategorization success over random object regions and targets.
fn success_rate(w: &World, corpus: &Corpus, trials: usize, spec_for: impl Fn(usize) -> AttackSpec) -> f64 {
    let mut rng = rngs::stream(99, &[]);
    let c = w.config.num_categories;
    let mut hits = 0;
    for t in 0..trials {
        let scene = &corpus.scenes[t % corpus.scenes.len()];
        let objects: Vec<usize> = (0..scene.proposals.len())
            .filter(|&i| scene.proposals[i].object.is_some())
            .collect();
        let region = objects[rng.random_range(0..objects.len())];
        let truth = scene.proposals[region].gt_label;
        let target = (truth + rng.random_range(1..c)) % c;
        let out = attack_region(&w.stub, scene, region, &spec_for(target), 0.5).unwrap();
        hits += usize::from(out.success);
    }
    hits as f64 / trials as f64
}

#[test]
fn zero_budget_changes_nothing() {
    let w = world();
    let corpus = w.generate_corpus(30, 1).unwrap();
    for scene in &corpus.scenes {
        let region = scene.proposals.iter().position(|p| p.object.is_some()).unwrap();
        let truth = scene.proposals[region].gt_label;
        let target = (truth + 1) % w.config.num_categories;
        let out = attack_region(
            &w.stub,
            scene,
            region,
            &ifgsm(AttackGoal::Miscategorize(target), 0.0, 5),
            0.5,
        )
        .unwrap();
        assert_eq!(&out.scene, scene);
        assert_eq!(out.success, scene.proposals[region].pred_label == target);
    }
}

#[test]
fn budget_beyond_prototype_distances_succeeds() {
    let w = world();
    let corpus = w.generate_corpus(500, 2).unwrap();
    let protos = &w.stub.prototypes;
    let mut widest: f64 = 0.0;
    for a in protos {
        for b in protos {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            widest = widest.max(d2.sqrt());
        }
    }
    let rate = success_rate(&w, &corpus, 500, |t| ifgsm(AttackGoal::Miscategorize(t), widest, 20));
    assert!(rate >= 0.9, "success {rate:.3} at epsilon {widest:.2}");
}

#[test]
fn iterative_attack_is_at_least_as_strong_as_one_step() {
    let w = world();
    let corpus = w.generate_corpus(400, 3).unwrap();
    for eps in [1.0, 1.5, 2.5] {
        let one = success_rate(&w, &corpus, 400, |t| {
            AttackSpec::fgsm(AttackGoal::Miscategorize(t), eps, CoordMask::Full)
        });
        let many = success_rate(&w, &corpus, 400, |t| ifgsm(AttackGoal::Miscategorize(t), eps, 10));
        assert!(many >= one, "epsilon {eps}: one-step {one:.3}, iterative {many:.3}");
    }
}

fn plan(kind: AttackKind) -> AttackPlan {
    AttackPlan {
        kind,
        epsilon: 1.5,
        steps: 10,
        step_size: None,
        mask_fraction: 1.0,
        attempts: 3,
    }
}

#[test]
fn labels_count_the_proposals_of_attacked_objects() {
    let w = world();
    let corpus = w.generate_corpus(80, 4).unwrap();
    for kind in AttackKind::ALL {
        let a = build_attacked_corpus(&corpus, &w.stub, &plan(kind), 5).unwrap();
        for (s, ann) in a.annotations.iter().enumerate() {
            let scene = &a.corpus.scenes[s];
            let labels = a.labels(s);
            assert_eq!(labels.len(), scene.proposals.len());
            let expected: Vec<usize> = match ann.object {
                Some(o) => scene.proposals_of(o).collect(),
                None => vec![ann.region],
            };
            assert_eq!(ann.positives, expected);
            assert_eq!(labels.iter().filter(|&&l| l).count(), expected.len());
        }
    }
}

#[test]
fn retained_hiding_attacks_erase_the_object() {
    let w = world();
    let corpus = w.generate_corpus(200, 6).unwrap();
    let a = build_attacked_corpus(&corpus, &w.stub, &plan(AttackKind::Hide), 7).unwrap();
    let bg = w.stub.background();
    let hidden = a
        .annotations
        .iter()
        .enumerate()
        .filter(|(s, ann)| {
            ann.positives.iter().all(|&i| {
                let (label, _) = detect_second_stage(&w.stub, &a.corpus.scenes[*s].proposals[i].features);
                label == bg
            })
        })
        .count();
    assert!(
        hidden as f64 >= 0.9 * a.annotations.len() as f64,
        "{hidden}/{}",
        a.annotations.len()
    );
}

#[test]
fn attacked_corpora_are_deterministic_and_round_trip() {
    let w = world();
    let corpus = w.generate_corpus(60, 8).unwrap();
    let p = AttackPlan {
        mask_fraction: 0.25,
        epsilon: 4.0,
        ..plan(AttackKind::Appear)
    };
    let a = build_attacked_corpus(&corpus, &w.stub, &p, 9).unwrap();
    let b = build_attacked_corpus(&corpus, &w.stub, &p, 9).unwrap();
    assert_eq!(encode_attacked(&a), encode_attacked(&b));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.attacked");
    save_attacked(&a, &path).unwrap();
    assert_eq!(load_attacked(&path).unwrap(), a);
}

#[test]
fn hopeless_budget_aborts_the_corpus() {
    let w = world();
    let corpus = w.generate_corpus(40, 10).unwrap();
    let p = AttackPlan {
        epsilon: 0.0,
        ..plan(AttackKind::Miscategorize)
    };
    assert!(build_attacked_corpus(&corpus, &w.stub, &p, 11).is_err());
}
