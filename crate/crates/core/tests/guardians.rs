use std::collections::BTreeMap;
use std::sync::OnceLock;

use sceme::guardians::{
    calibrate_thresholds, reconstruction_error, AeConfig, AeHyper, Guardians, ThresholdMode, ThresholdTable,
};
use sceme::sceme::{extract_context_profiles, train_sceme, ContextProfile, ProfileGroups, ScemeConfig, ScemeHyper};
use sceme::synthworld::{World, WorldConfig};

struct Fixture {
    guardians: Guardians,
    heldout: ProfileGroups,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let w = World::new(WorldConfig {
            signature_scale: 2.0,
            ..Default::default()
        })
        .unwrap();
        let train = w.generate_corpus(1000, 1).unwrap();
        let held = w.generate_corpus(400, 2).unwrap();
        let hyper = ScemeHyper {
            epochs: 4,
            lr: 5e-3,
            ..Default::default()
        };
        let model = train_sceme(&train, &w.stub, ScemeConfig::default(), &hyper)
            .unwrap()
            .model;
        let groups = extract_context_profiles(&model, &train, &w.stub).unwrap();
        let ae = AeHyper {
            epochs: 15,
            lr: 1e-3,
            ..Default::default()
        };
        let guardians = Guardians::train(&groups, w.stub.background(), &AeConfig::for_dim(32), &ae).unwrap();
        Fixture {
            guardians,
            heldout: extract_context_profiles(&model, &held, &w.stub).unwrap(),
        }
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn errors(g: &Guardians, category: usize, ps: &[ContextProfile]) -> Vec<f64> {
    let ae = &g.aes[&category];
    ps.iter().map(|p| reconstruction_error(ae, p).unwrap()).collect()
}

#[test]
fn own_category_reconstructs_best() {
    let f = fixture();
    for &c in f.guardians.aes.keys() {
        let own = mean(&errors(&f.guardians, c, &f.heldout[&c]));
        for (&other, ps) in &f.heldout {
            if other != c {
                let foreign = mean(&errors(&f.guardians, c, ps));
                assert!(own < foreign, "AE {c}: own {own:.4}, category {other} {foreign:.4}");
            }
        }
    }
}

#[test]
fn foreign_gates_raise_the_error() {
    let f = fixture();
    let d = 32;
    let (mut better, mut total) = (0, 0);
    for (&c, ps) in &f.heldout {
        let donor_cat = f.heldout.keys().copied().find(|&k| k != c).unwrap();
        let donors = &f.heldout[&donor_cat];
        for (i, p) in ps.iter().take(100).enumerate() {
            let mut swapped = p.clone();
            swapped.values[d..].copy_from_slice(&donors[i % donors.len()].values[d..]);
            let ae = &f.guardians.aes[&c];
            let (a, b) = (
                reconstruction_error(ae, p).unwrap(),
                reconstruction_error(ae, &swapped).unwrap(),
            );
            better += usize::from(a < b);
            total += 1;
        }
    }
    let rate = better as f64 / total as f64;
    assert!(rate > 0.8, "swap raised the error for {rate:.3} of profiles");
}

#[test]
fn calibration_boundaries_and_recount() {
    let f = fixture();
    let all = calibrate_thresholds(&f.guardians, &f.heldout, 1.0, ThresholdMode::PerCategory).unwrap();
    let none = calibrate_thresholds(&f.guardians, &f.heldout, 0.0, ThresholdMode::PerCategory).unwrap();
    let benign = f.guardians.benign_errors(&f.heldout).unwrap();
    for (c, errs) in &benign {
        assert_eq!(all.get(*c), Some(0.0));
        let max = errs.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(none.get(*c), Some(max));
        assert!(errs.iter().filter(|&&e| e > max).count() == 0);
    }

    let t = calibrate_thresholds(&f.guardians, &f.heldout, 0.05, ThresholdMode::PerCategory).unwrap();
    let (mut over, mut n) = (0, 0);
    for (c, errs) in &benign {
        let cut = t.get(*c).unwrap();
        over += errs.iter().filter(|&&e| e > cut).count();
        n += errs.len();
    }
    assert!(n >= 1000, "{n} held-out profiles");
    let rate = over as f64 / n as f64;
    assert!((0.03..=0.07).contains(&rate), "benign exceedance {rate:.4}");
}

#[test]
fn threshold_table_survives_text_round_trip() {
    let f = fixture();
    let t = calibrate_thresholds(&f.guardians, &f.heldout, 0.05, ThresholdMode::Global).unwrap();
    assert_eq!(ThresholdTable::from_text(&t.to_text()).unwrap(), t);
    let cuts: Vec<f64> = t.thresholds.values().copied().collect();
    assert!(cuts.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn sparse_categories_are_skipped_and_fall_back_to_background() {
    let f = fixture();
    let bg = f.guardians.background;
    let mut groups: ProfileGroups = BTreeMap::new();
    groups.insert(bg, f.heldout[&bg].clone());
    groups.insert(0, f.heldout[&0][..5].to_vec());
    let hyper = AeHyper {
        epochs: 1,
        min_profiles: 50,
        ..Default::default()
    };
    let g = Guardians::train(&groups, bg, &AeConfig::for_dim(32), &hyper).unwrap();
    assert_eq!(g.skipped.get(&0), Some(&5));
    let s = g.score(&f.heldout[&0][0]).unwrap();
    assert!(s.fallback);
    assert_eq!(s.scorer, bg);

    groups.remove(&bg);
    assert!(Guardians::train(
        &groups,
        bg,
        &AeConfig::for_dim(32),
        &AeHyper {
            min_profiles: 1,
            epochs: 1,
            ..Default::default()
        }
    )
    .is_err());
}
