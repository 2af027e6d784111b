use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use sceme::guardians::{ProfileFeatures, ThresholdMode, ThresholdTable};
use sceme::harness::{
    flag_regions, pipeline_detect, roc_auc, scene_profiles, Detector, Results, RunConfig, RunDir, Stage,
};
use sceme::redteam::AttackedCorpus;
use sceme::rngs;

fn mini() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini.toml");
    RunConfig::load(&path).unwrap()
}

fn table(cuts: &[(usize, f64)]) -> ThresholdTable {
    ThresholdTable {
        target_fpr: 0.05,
        mode: ThresholdMode::PerCategory,
        thresholds: cuts.iter().copied().collect(),
        excluded: Vec::new(),
    }
}

#[test]
fn flags_follow_a_hand_trace() {
    // region 0: 0.20 vs cutoff 0.30 of AE 0 -> kept
    // region 1: 0.50 vs cutoff 0.30 of AE 0 -> flagged
    // region 2: 0.30 vs cutoff 0.25 of AE 1 -> flagged
    // region 3: 0.30 vs cutoff 0.30 of AE 0 -> kept, the rule is strict
    let t = table(&[(0, 0.3), (1, 0.25)]);
    let flags = flag_regions(&[(0.2, 0), (0.5, 0), (0.3, 1), (0.3, 0)], &t);
    assert_eq!(flags, [false, true, true, false]);
}

#[test]
fn null_scores_give_chance_auc() {
    let mut rng = rngs::stream(4, &[]);
    let scores: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
    let mut labels: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
    labels.shuffle(&mut rng);
    let (_, auc) = roc_auc(&scores, &labels).unwrap();
    assert!((auc - 0.5).abs() < 0.02, "{auc}");
}

struct Run {
    _dir: tempfile::TempDir,
    run: RunDir,
}

fn trained(cfg: RunConfig) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::open(dir.path(), cfg).unwrap();
    run.run(Stage::Eval).unwrap();
    Run { _dir: dir, run }
}

fn reversed(a: &AttackedCorpus) -> AttackedCorpus {
    let mut r = a.clone();
    r.corpus.scenes.reverse();
    r.annotations.reverse();
    r
}

#[test]
fn detection_is_scene_order_invariant_and_bounded_by_infinite_cutoffs() {
    let Run { run, _dir } = trained(mini());
    let (art, corpora) = run.artifacts().unwrap();
    let attacks = run.attacks(&art.world, &corpora.eval).unwrap();
    let (label, attacked) = &attacks[0];
    let eval = &run.config().eval;
    let det = &art.full;
    let a = pipeline_detect(
        &art.sceme,
        &art.world,
        det,
        attacked,
        label,
        ProfileFeatures::Full,
        eval,
    )
    .unwrap();
    let b = pipeline_detect(
        &art.sceme,
        &art.world,
        det,
        &reversed(attacked),
        label,
        ProfileFeatures::Full,
        eval,
    )
    .unwrap();
    assert_eq!(a.auc, b.auc);
    assert_eq!(a.objects, b.objects);
    let key = |r: &sceme::harness::RegionRecord| (r.scene_id, r.region_idx);
    let mut ra = a.records.clone();
    let mut rb = b.records.clone();
    ra.sort_by_key(key);
    rb.sort_by_key(key);
    assert_eq!(ra, rb);

    let closed = Detector {
        guardians: det.guardians.clone(),
        thresholds: table(
            &det.guardians
                .aes
                .keys()
                .map(|&c| (c, f64::INFINITY))
                .collect::<Vec<_>>(),
        ),
    };
    let c = pipeline_detect(
        &art.sceme,
        &art.world,
        &closed,
        attacked,
        label,
        ProfileFeatures::Full,
        eval,
    )
    .unwrap();
    assert!(c.records.iter().all(|r| !r.flagged));
    assert_eq!(c.objects.detected, 0);
    assert_eq!(c.region_fpr, 0.0);
}

#[test]
fn reloaded_artifacts_rescore_bit_exactly() {
    let Run { run, _dir } = trained(mini());
    let (fresh, corpora) = run.artifacts().unwrap();
    let reopened = RunDir::open(run.root(), run.config().clone()).unwrap();
    let (loaded, _) = reopened.artifacts().unwrap();
    assert_eq!(loaded.sceme, fresh.sceme);

    let mut rng = rngs::stream(12, &[]);
    let mut scenes: Vec<usize> = (0..corpora.eval.scenes.len()).collect();
    scenes.shuffle(&mut rng);
    let mut checked = 0;
    for &s in &scenes {
        let scene = &corpora.eval.scenes[s];
        let a = scene_profiles(&fresh.sceme, &fresh.world, scene).unwrap();
        let b = scene_profiles(&loaded.sceme, &loaded.world, scene).unwrap();
        for (p, q) in a.iter().zip(&b) {
            let x = fresh.full.guardians.score(p).unwrap();
            let y = loaded.full.guardians.score(q).unwrap();
            assert_eq!(x.error.to_bits(), y.error.to_bits());
            checked += 1;
        }
        if checked >= 100 {
            break;
        }
    }
    assert!(checked >= 100);
    assert_eq!(loaded.full.thresholds, fresh.full.thresholds);
}

#[test]
fn node_only_reports_share_the_schema_and_beat_chance() {
    let Run { run, _dir } = trained(mini());
    let text = std::fs::read_to_string(run.path("results/results.json")).unwrap();
    let results: Results = serde_json::from_str(&text).unwrap();
    assert_eq!(results.full.len(), results.node_only.len());
    for (f, n) in results.full.iter().zip(&results.node_only) {
        assert_eq!(f.attack, n.attack);
        assert_eq!(n.features, ProfileFeatures::NodeOnly);
        assert_eq!(f.recall.len(), n.recall.len());
        let names = |r: &sceme::harness::DetectionReport| r.strata.iter().map(|t| t.name.clone()).collect::<Vec<_>>();
        assert_eq!(names(f), names(n));

        let records =
            sceme::harness::read_records_csv(&run.path(&format!("results/node-only/{}.records.csv", n.attack)))
                .unwrap();
        let pos = records.iter().filter(|r| r.4).count() as f64;
        let neg = records.len() as f64 - pos;
        let sigma = ((pos + neg + 1.0) / (12.0 * pos * neg)).sqrt();
        assert!(
            n.auc > 0.5 + 3.0 * sigma,
            "{}: {:.3} (sigma {sigma:.3})",
            n.attack,
            n.auc
        );
    }
}

#[test]
fn single_bucket_matches_global_auc() {
    let mut cfg = mini();
    cfg.world.objects_per_scene = (2, 2);
    cfg.eval.min_bucket_samples = 1;
    let Run { run, _dir } = trained(cfg);
    let text = std::fs::read_to_string(run.path("results/results.json")).unwrap();
    let results: Results = serde_json::from_str(&text).unwrap();
    for r in &results.full {
        let t = r.strata.iter().find(|t| t.name == "objects per scene").unwrap();
        let populated: Vec<_> = t.buckets.iter().filter(|b| b.attacked > 0).collect();
        assert_eq!(populated.len(), 1);
        assert_eq!(populated[0].label, "2");
        assert!((populated[0].auc.unwrap() - r.auc).abs() < 1e-12);
    }
}

#[test]
fn sparse_categories_are_named_in_the_manifest() {
    let mut cfg = mini();
    cfg.eval.node_only_ablation = false;
    cfg.world.background_rate = 10.0;
    let probe = trained(cfg.clone());
    let (art, corpora) = probe.run.artifacts().unwrap();
    let groups = sceme::sceme::extract_context_profiles(&art.sceme, &corpora.train, &art.world.stub).unwrap();
    let bg = art.world.stub.background();
    let (&small, ps) = groups
        .iter()
        .filter(|(c, _)| **c != bg)
        .min_by_key(|(_, ps)| ps.len())
        .unwrap();
    assert!(ps.len() < groups[&bg].len());

    cfg.ae_training.min_profiles = ps.len() + 1;
    let Run { run, _dir } = trained(cfg);
    let manifest = run.read_manifest().unwrap().unwrap();
    let skipped: &BTreeMap<usize, usize> = &manifest.skipped_categories["full"];
    assert_eq!(skipped.get(&small), Some(&ps.len()));
    assert!(!manifest.artifacts.contains_key(&format!("models/full/ae-{small}.ae")));
}

#[test]
fn report_reads_results_only() {
    let Run { run, _dir } = trained(mini());
    let before = std::fs::read_to_string(run.path("summary.md")).unwrap();
    for d in ["models", "corpora", "attacks"] {
        std::fs::remove_dir_all(run.path(d)).unwrap();
    }
    run.run(Stage::Report).unwrap();
    assert_eq!(std::fs::read_to_string(run.path("summary.md")).unwrap(), before);
    assert!(!run.path("models").exists());
    assert!(before.contains("| SCEME (node features only) |"));
    assert!(before.contains("synthetic"));
}

#[test]
fn a_run_dir_refuses_a_different_config() {
    let Run { run, _dir } = trained(mini());
    let mut other = mini();
    other.seeds.attack += 1;
    assert!(RunDir::open(run.root(), other).is_err());
}
