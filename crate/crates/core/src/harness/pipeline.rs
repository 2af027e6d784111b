use std::collections::BTreeMap;

use super::config::{attack_label, RunConfig};
use super::metrics::{recall_at_fpr, roc_auc};
use super::report::{stratified_report, DetectionReport, ObjectDetection, RegionRecord};
use super::{EvalConfig, HarnessError};
use crate::guardians::{calibrate_thresholds, Guardians, ProfileFeatures, ThresholdTable};
use crate::par;
use crate::redteam::{build_attacked_corpus, AttackedCorpus};
use crate::sceme::{extract_context_profiles, message_pass, train_sceme, ContextProfile, ScemeModel};
use crate::synthworld::{detect_second_stage, Corpus, Scene, World};

/// The three clean corpora of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpora {
    pub train: Corpus,
    pub heldout: Corpus,
    pub eval: Corpus,
}

pub fn build_world(cfg: &RunConfig) -> Result<World, HarnessError> {
    World::new(cfg.world.clone()).map_err(|e| HarnessError::stage("world", e))
}

pub fn generate_corpora(cfg: &RunConfig, world: &World) -> Result<Corpora, HarnessError> {
    let gen = |n, seed| {
        world
            .generate_corpus(n, seed)
            .map_err(|e| HarnessError::stage("gen-corpus", e))
    };
    Ok(Corpora {
        train: gen(cfg.data.train_scenes, cfg.seeds.train)?,
        heldout: gen(cfg.data.heldout_scenes, cfg.seeds.heldout)?,
        eval: gen(cfg.data.eval_scenes, cfg.seeds.eval)?,
    })
}

/// Per-category autoencoders and their calibrated thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub guardians: Guardians,
    pub thresholds: ThresholdTable,
}

/// Trained artifacts of a run.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub world: World,
    pub sceme: ScemeModel,
    pub sceme_loss: Vec<f64>,
    pub full: Detector,
    pub node_only: Option<Detector>,
}

impl Artifacts {
    pub fn detector(&self, features: ProfileFeatures) -> Option<&Detector> {
        match features {
            ProfileFeatures::Full => Some(&self.full),
            ProfileFeatures::NodeOnly => self.node_only.as_ref(),
        }
    }
}

pub fn train_context_model(
    cfg: &RunConfig,
    world: &World,
    train: &Corpus,
) -> Result<(ScemeModel, Vec<f64>), HarnessError> {
    let trained = train_sceme(train, &world.stub, cfg.sceme.clone(), &cfg.sceme_training)
        .map_err(|e| HarnessError::stage("train-sceme", e))?;
    Ok((trained.model, trained.loss_history))
}

/// Extract profiles, train one autoencoder per eligible category and
/// calibrate thresholds on the held-out corpus.
pub fn train_detector(
    cfg: &RunConfig,
    world: &World,
    sceme: &ScemeModel,
    corpora: &Corpora,
    features: ProfileFeatures,
) -> Result<Detector, HarnessError> {
    let groups = extract_context_profiles(sceme, &corpora.train, &world.stub)
        .map_err(|e| HarnessError::stage("extract-profiles", e))?;
    let hyper = crate::guardians::AeHyper {
        features,
        ..cfg.ae_training.clone()
    };
    let guardians = Guardians::train(&groups, world.stub.background(), &cfg.ae_config(), &hyper)
        .map_err(|e| HarnessError::stage("train-autoencoders", e))?;
    for (c, n) in &guardians.skipped {
        log::warn!("category {c} skipped: {n} profiles");
    }
    let heldout = extract_context_profiles(sceme, &corpora.heldout, &world.stub)
        .map_err(|e| HarnessError::stage("extract-profiles", e))?;
    let thresholds = calibrate_thresholds(&guardians, &heldout, cfg.eval.target_fpr, cfg.eval.threshold_mode)
        .map_err(|e| HarnessError::stage("calibrate", e))?;
    Ok(Detector { guardians, thresholds })
}

/// Training phase end to end on fresh corpora.
pub fn pipeline_train(cfg: &RunConfig) -> Result<(Artifacts, Corpora), HarnessError> {
    cfg.validate()?;
    let world = build_world(cfg)?;
    let corpora = generate_corpora(cfg, &world)?;
    let artifacts = pipeline_train_on(cfg, world, &corpora)?;
    Ok((artifacts, corpora))
}

pub fn pipeline_train_on(cfg: &RunConfig, world: World, corpora: &Corpora) -> Result<Artifacts, HarnessError> {
    let (sceme, sceme_loss) = train_context_model(cfg, &world, &corpora.train)?;
    let full = train_detector(cfg, &world, &sceme, corpora, ProfileFeatures::Full)?;
    let node_only = if cfg.eval.node_only_ablation {
        Some(ablation_node_only(cfg, &world, &sceme, corpora)?)
    } else {
        None
    };
    Ok(Artifacts {
        world,
        sceme,
        sceme_loss,
        full,
        node_only,
    })
}

/// The same detector with autoencoders trained on node features alone.
pub fn ablation_node_only(
    cfg: &RunConfig,
    world: &World,
    sceme: &ScemeModel,
    corpora: &Corpora,
) -> Result<Detector, HarnessError> {
    train_detector(cfg, world, sceme, corpora, ProfileFeatures::NodeOnly)
}

/// Profiles of one scene, keyed to the stub's current prediction.
pub fn scene_profiles(sceme: &ScemeModel, world: &World, scene: &Scene) -> Result<Vec<ContextProfile>, HarnessError> {
    let ctx = message_pass(sceme, scene, false, 0).map_err(|e| HarnessError::stage("detect", e))?;
    Ok(ctx
        .into_iter()
        .map(|c| {
            let mut p = c.profile;
            p.predicted = detect_second_stage(&world.stub, &scene.proposals[p.region].features).0;
            p
        })
        .collect())
}

/// Flag every region whose error exceeds the cutoff of its scoring
/// autoencoder.
pub fn flag_regions(errors: &[(f64, usize)], thresholds: &ThresholdTable) -> Vec<bool> {
    errors
        .iter()
        .map(|&(e, scorer)| thresholds.get(scorer).is_some_and(|t| e > t))
        .collect()
}

/// Testing phase over a labeled attacked corpus.
pub fn pipeline_detect(
    sceme: &ScemeModel,
    world: &World,
    detector: &Detector,
    attacked: &AttackedCorpus,
    attack: &str,
    features: ProfileFeatures,
    eval: &EvalConfig,
) -> Result<DetectionReport, HarnessError> {
    let per_scene = par::try_map_indexed(&attacked.corpus.scenes, |s, scene| {
        let labels = attacked.labels(s);
        let profiles = scene_profiles(sceme, world, scene)?;
        let scores = profiles
            .iter()
            .map(|p| detector.guardians.score(p))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::stage("detect", e))?;
        let keyed: Vec<(f64, usize)> = scores.iter().map(|s| (s.error, s.scorer)).collect();
        let flags = flag_regions(&keyed, &detector.thresholds);
        Ok::<_, HarnessError>(
            profiles
                .iter()
                .zip(&scores)
                .zip(flags)
                .map(|((p, s), flagged)| RegionRecord {
                    scene_id: scene.id,
                    region_idx: p.region,
                    pred_cat: p.predicted,
                    recon_err: s.error,
                    label: labels[p.region],
                    flagged,
                    scorer: s.scorer,
                    fallback: s.fallback,
                })
                .collect::<Vec<_>>(),
        )
    })?;

    let mut objects = ObjectDetection::default();
    for (s, records) in per_scene.iter().enumerate() {
        let positives = &attacked.annotations[s].positives;
        objects.attacked += 1;
        if positives.is_empty() {
            objects.no_region += 1;
        } else if positives.iter().any(|&i| records[i].flagged) {
            objects.detected += 1;
        }
    }
    let records: Vec<RegionRecord> = per_scene.into_iter().flatten().collect();
    summarize(records, objects, attacked, attack, features, eval)
}

pub(crate) fn summarize(
    records: Vec<RegionRecord>,
    objects: ObjectDetection,
    attacked: &AttackedCorpus,
    attack: &str,
    features: ProfileFeatures,
    eval: &EvalConfig,
) -> Result<DetectionReport, HarnessError> {
    let scores: Vec<f64> = records.iter().map(|r| r.recon_err).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.label).collect();
    let (roc, auc) = roc_auc(&scores, &labels)?;
    let recall = recall_at_fpr(&scores, &labels, &eval.fpr_grid)?;

    let mut by_cat: BTreeMap<usize, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for r in &records {
        let e = by_cat.entry(r.pred_cat).or_default();
        e.0.push(r.recon_err);
        e.1.push(r.label);
    }
    let per_category_auc = by_cat
        .into_iter()
        .map(|(c, (s, l))| (c, roc_auc(&s, &l).ok().map(|(_, a)| a)))
        .collect();

    let neg = labels.iter().filter(|&&l| !l).count();
    let pos = labels.len() - neg;
    let flagged_neg = records.iter().filter(|r| r.flagged && !r.label).count();
    let flagged_pos = records.iter().filter(|r| r.flagged && r.label).count();
    let strata = stratified_report(&records, attacked, eval.min_bucket_samples)?;
    Ok(DetectionReport {
        attack: attack.to_string(),
        features,
        auc,
        roc,
        per_category_auc,
        recall,
        region_fpr: flagged_neg as f64 / neg as f64,
        region_tpr: flagged_pos as f64 / pos as f64,
        objects,
        fallback_regions: records.iter().filter(|r| r.fallback).count(),
        strata,
        records,
    })
}

/// Region-level false-positive rate of a detector on a clean corpus.
pub fn clean_fpr(sceme: &ScemeModel, world: &World, detector: &Detector, corpus: &Corpus) -> Result<f64, HarnessError> {
    let per_scene = par::try_map(&corpus.scenes, |scene| {
        let profiles = scene_profiles(sceme, world, scene)?;
        let mut flagged = 0usize;
        for p in &profiles {
            let s = detector
                .guardians
                .score(p)
                .map_err(|e| HarnessError::stage("detect", e))?;
            if flag_regions(&[(s.error, s.scorer)], &detector.thresholds)[0] {
                flagged += 1;
            }
        }
        Ok::<_, HarnessError>((flagged, profiles.len()))
    })?;
    let (f, n) = per_scene.into_iter().fold((0, 0), |(a, b), (f, n)| (a + f, b + n));
    Ok(f as f64 / n.max(1) as f64)
}

/// One attacked corpus per configured attack, in config order.
pub fn build_attacks(
    cfg: &RunConfig,
    world: &World,
    eval: &Corpus,
) -> Result<Vec<(String, AttackedCorpus)>, HarnessError> {
    cfg.attacks
        .iter()
        .enumerate()
        .map(|(i, plan)| {
            let seed = crate::rngs::derive(cfg.seeds.attack, &[i as u64]);
            build_attacked_corpus(eval, &world.stub, plan, seed)
                .map(|a| (attack_label(plan), a))
                .map_err(|e| HarnessError::stage("attack", e))
        })
        .collect()
}

/// Reports for every attack, full profile first then node-only.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub full: Vec<DetectionReport>,
    pub node_only: Vec<DetectionReport>,
}

pub fn detect_all(
    cfg: &RunConfig,
    artifacts: &Artifacts,
    attacks: &[(String, AttackedCorpus)],
) -> Result<Evaluation, HarnessError> {
    let run = |features: ProfileFeatures, det: &Detector| {
        attacks
            .iter()
            .map(|(label, a)| pipeline_detect(&artifacts.sceme, &artifacts.world, det, a, label, features, &cfg.eval))
            .collect::<Result<Vec<_>, _>>()
    };
    let full = run(ProfileFeatures::Full, &artifacts.full)?;
    let node_only = match &artifacts.node_only {
        Some(d) => run(ProfileFeatures::NodeOnly, d)?,
        None => Vec::new(),
    };
    Ok(Evaluation { full, node_only })
}
