use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{attack_label, RunConfig, Seeds};
use super::pipeline::{
    build_attacks, build_world, clean_fpr, detect_all, generate_corpora, train_context_model, train_detector,
    Artifacts, Corpora, Detector, Evaluation,
};
use super::report::{render_summary, write_file, write_records_csv, write_roc_csv, DetectionReport};
use super::HarnessError;
use crate::codec::sha256_hex;
use crate::guardians::{AutoEncoder, Guardians, ProfileFeatures, ThresholdTable};
use crate::redteam::{load_attacked, save_attacked, AttackedCorpus};
use crate::sceme::{load_sceme, save_sceme};
use crate::synthworld::{load_corpus, save_corpus, Corpus, World};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenCorpus,
    Train,
    Attack,
    Detect,
    Eval,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Detect => "detect",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

/// Record of a run directory: what produced it and the digest of every
/// artifact in it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub backend: String,
    pub config_hash: String,
    pub seeds: Seeds,
    /// Relative path to sha256.
    pub artifacts: BTreeMap<String, String>,
    /// Categories without an autoencoder, per feature set, with their
    /// training profile counts.
    pub skipped_categories: BTreeMap<String, BTreeMap<usize, usize>>,
}

/// Machine-readable results; `report` renders from this file alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub config_hash: String,
    /// Region-level FPR of the full detector on the clean evaluation corpus.
    pub clean_fpr: f64,
    pub full: Vec<DetectionReport>,
    pub node_only: Vec<DetectionReport>,
}

fn features_dir(f: ProfileFeatures) -> &'static str {
    match f {
        ProfileFeatures::Full => "full",
        ProfileFeatures::NodeOnly => "node-only",
    }
}

const CORPORA: [&str; 3] = ["train", "heldout", "eval"];

/// A run directory bound to one config. Stages reuse artifacts already
/// recorded in the manifest, so interrupted runs resume where they stopped.
pub struct RunDir {
    root: PathBuf,
    cfg: RunConfig,
}

impl RunDir {
    /// Fails when the directory already holds a run of a different config.
    /// Nothing is written until a stage runs.
    pub fn open(root: &Path, cfg: RunConfig) -> Result<RunDir, HarnessError> {
        cfg.validate()?;
        let dir = RunDir {
            root: root.to_path_buf(),
            cfg,
        };
        if let Some(m) = dir.read_manifest()? {
            if m.config_hash != dir.cfg.hash() {
                return Err(HarnessError::Config(format!(
                    "{} holds a run of a different config",
                    root.display()
                )));
            }
        }
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn manifest_path(&self) -> PathBuf {
        self.path("manifest.json")
    }

    pub fn read_manifest(&self) -> Result<Option<Manifest>, HarnessError> {
        let p = self.manifest_path();
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))
    }

    fn manifest(&self) -> Result<Manifest, HarnessError> {
        Ok(self.read_manifest()?.unwrap_or_else(|| Manifest {
            version: VERSION.to_string(),
            backend: if cfg!(feature = "parallel") { "rayon" } else { "serial" }.to_string(),
            config_hash: self.cfg.hash(),
            seeds: self.cfg.seeds.clone(),
            ..Manifest::default()
        }))
    }

    fn write_manifest(&self, m: &Manifest) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(m).expect("manifest serializes");
        write_file(&self.manifest_path(), text.as_bytes())
    }

    fn ensure_dir(&self, rel: &str) -> Result<(), HarnessError> {
        let p = self.path(rel);
        std::fs::create_dir_all(&p).map_err(|e| HarnessError::io(&p, e))?;
        let cfg_path = self.path("config.toml");
        if !cfg_path.exists() {
            let text = toml::to_string(&self.cfg).map_err(|e| HarnessError::Config(e.to_string()))?;
            write_file(&cfg_path, text.as_bytes())?;
        }
        Ok(())
    }

    /// Digest the given files into the manifest.
    fn record(&self, rels: &[String], update: impl FnOnce(&mut Manifest)) -> Result<(), HarnessError> {
        let mut m = self.manifest()?;
        for rel in rels {
            let p = self.path(rel);
            let bytes = std::fs::read(&p).map_err(|e| HarnessError::io(&p, e))?;
            m.artifacts.insert(rel.clone(), sha256_hex(&bytes));
        }
        update(&mut m);
        self.write_manifest(&m)
    }

    /// True when every file exists with the digest the manifest recorded.
    fn intact(&self, rels: &[String]) -> Result<bool, HarnessError> {
        let Some(m) = self.read_manifest()? else {
            return Ok(false);
        };
        for rel in rels {
            let Some(want) = m.artifacts.get(rel) else {
                return Ok(false);
            };
            match std::fs::read(self.path(rel)) {
                Ok(bytes) if sha256_hex(&bytes) == *want => {}
                _ => return Ok(false),
            }
        }
        Ok(true)
    }

    pub fn world(&self) -> Result<World, HarnessError> {
        build_world(&self.cfg)
    }

    fn corpus_files() -> Vec<String> {
        CORPORA.iter().map(|n| format!("corpora/{n}.corpus")).collect()
    }

    pub fn corpora(&self, world: &World) -> Result<Corpora, HarnessError> {
        let files = Self::corpus_files();
        if self.intact(&files)? {
            let load = |rel: &str| load_corpus(&self.path(rel)).map_err(|e| HarnessError::stage("gen-corpus", e));
            return Ok(Corpora {
                train: load(&files[0])?,
                heldout: load(&files[1])?,
                eval: load(&files[2])?,
            });
        }
        log::info!("generating corpora");
        let c = generate_corpora(&self.cfg, world)?;
        self.ensure_dir("corpora")?;
        for (rel, corpus) in files.iter().zip([&c.train, &c.heldout, &c.eval]) {
            save_corpus(corpus, &self.path(rel)).map_err(|e| HarnessError::stage("gen-corpus", e))?;
        }
        self.record(&files, |_| {})?;
        Ok(c)
    }

    fn detector_files(&self, features: ProfileFeatures) -> Result<Option<Vec<String>>, HarnessError> {
        let Some(m) = self.read_manifest()? else {
            return Ok(None);
        };
        let dir = format!("models/{}/", features_dir(features));
        let files: Vec<String> = m.artifacts.keys().filter(|k| k.starts_with(&dir)).cloned().collect();
        Ok((!files.is_empty()).then_some(files))
    }

    fn load_detector(&self, world: &World, features: ProfileFeatures) -> Result<Option<Detector>, HarnessError> {
        let Some(files) = self.detector_files(features)? else {
            return Ok(None);
        };
        if !self.intact(&files)? {
            return Ok(None);
        }
        let stage = |e: &dyn std::fmt::Display| HarnessError::stage("train", e);
        let mut aes = BTreeMap::new();
        let mut thresholds = None;
        for rel in &files {
            if rel.ends_with(".ae") {
                let ae = AutoEncoder::load(&self.path(rel)).map_err(|e| stage(&e))?;
                aes.insert(ae.category(), ae);
            } else if rel.ends_with("thresholds.txt") {
                thresholds = Some(ThresholdTable::load(&self.path(rel)).map_err(|e| stage(&e))?);
            }
        }
        let Some(thresholds) = thresholds else { return Ok(None) };
        let skipped = self
            .manifest()?
            .skipped_categories
            .get(features_dir(features))
            .cloned()
            .unwrap_or_default();
        Ok(Some(Detector {
            guardians: Guardians {
                background: world.stub.background(),
                aes,
                skipped,
            },
            thresholds,
        }))
    }

    fn save_detector(&self, det: &Detector, features: ProfileFeatures) -> Result<(), HarnessError> {
        let dir = format!("models/{}", features_dir(features));
        self.ensure_dir(&dir)?;
        let mut files = Vec::new();
        for (c, ae) in &det.guardians.aes {
            let rel = format!("{dir}/ae-{c}.ae");
            ae.save(&self.path(&rel)).map_err(|e| HarnessError::stage("train", e))?;
            files.push(rel);
        }
        let rel = format!("{dir}/thresholds.txt");
        det.thresholds
            .save(&self.path(&rel))
            .map_err(|e| HarnessError::stage("train", e))?;
        files.push(rel);
        let skipped = det.guardians.skipped.clone();
        self.record(&files, |m| {
            m.skipped_categories.insert(features_dir(features).to_string(), skipped);
        })
    }

    /// Trained artifacts, training whatever is missing.
    pub fn artifacts(&self) -> Result<(Artifacts, Corpora), HarnessError> {
        let world = self.world()?;
        let corpora = self.corpora(&world)?;
        let model_files = vec!["models/sceme.model".to_string(), "models/sceme-loss.json".to_string()];
        let (sceme, sceme_loss) = if self.intact(&model_files)? {
            let model = load_sceme(&self.path(&model_files[0])).map_err(|e| HarnessError::stage("train", e))?;
            let p = self.path(&model_files[1]);
            let text = std::fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))?;
            let loss: Vec<f64> = serde_json::from_str(&text).map_err(|e| HarnessError::stage("train", e))?;
            (model, loss)
        } else {
            log::info!("training context model");
            let (model, loss) = train_context_model(&self.cfg, &world, &corpora.train)?;
            self.ensure_dir("models")?;
            save_sceme(&model, &self.path(&model_files[0])).map_err(|e| HarnessError::stage("train", e))?;
            let text = serde_json::to_string(&loss).expect("losses serialize");
            write_file(&self.path(&model_files[1]), text.as_bytes())?;
            self.record(&model_files, |_| {})?;
            (model, loss)
        };

        let detector = |features: ProfileFeatures| -> Result<Detector, HarnessError> {
            if let Some(d) = self.load_detector(&world, features)? {
                return Ok(d);
            }
            log::info!("training {} autoencoders", features_dir(features));
            let d = train_detector(&self.cfg, &world, &sceme, &corpora, features)?;
            self.save_detector(&d, features)?;
            Ok(d)
        };
        let full = detector(ProfileFeatures::Full)?;
        let node_only = if self.cfg.eval.node_only_ablation {
            Some(detector(ProfileFeatures::NodeOnly)?)
        } else {
            None
        };
        Ok((
            Artifacts {
                world,
                sceme,
                sceme_loss,
                full,
                node_only,
            },
            corpora,
        ))
    }

    fn attack_files(&self) -> Vec<String> {
        self.cfg
            .attacks
            .iter()
            .map(|p| format!("attacks/{}.attacked", attack_label(p)))
            .collect()
    }

    pub fn attacks(&self, world: &World, eval: &Corpus) -> Result<Vec<(String, AttackedCorpus)>, HarnessError> {
        let files = self.attack_files();
        if self.intact(&files)? {
            return self
                .cfg
                .attacks
                .iter()
                .zip(&files)
                .map(|(plan, rel)| {
                    load_attacked(&self.path(rel))
                        .map(|a| (attack_label(plan), a))
                        .map_err(|e| HarnessError::stage("attack", e))
                })
                .collect();
        }
        log::info!("building {} attacked corpora", files.len());
        let attacks = build_attacks(&self.cfg, world, eval)?;
        self.ensure_dir("attacks")?;
        for ((_, a), rel) in attacks.iter().zip(&files) {
            save_attacked(a, &self.path(rel)).map_err(|e| HarnessError::stage("attack", e))?;
        }
        self.record(&files, |_| {})?;
        Ok(attacks)
    }

    /// Score every attacked corpus and write results, record CSVs and ROC
    /// CSVs.
    pub fn detect(&self) -> Result<Results, HarnessError> {
        let (artifacts, corpora) = self.artifacts()?;
        let attacks = self.attacks(&artifacts.world, &corpora.eval)?;
        log::info!("detecting");
        let Evaluation { full, node_only } = detect_all(&self.cfg, &artifacts, &attacks)?;
        let fpr = clean_fpr(&artifacts.sceme, &artifacts.world, &artifacts.full, &corpora.eval)?;
        let mut files = Vec::new();
        for (features, reports) in [(ProfileFeatures::Full, &full), (ProfileFeatures::NodeOnly, &node_only)] {
            if reports.is_empty() {
                continue;
            }
            let dir = format!("results/{}", features_dir(features));
            self.ensure_dir(&dir)?;
            for r in reports {
                let rel = format!("{dir}/{}.records.csv", r.attack);
                write_records_csv(&self.path(&rel), &r.records)?;
                files.push(rel);
                let rel = format!("{dir}/{}.roc.csv", r.attack);
                write_roc_csv(&self.path(&rel), &r.roc)?;
                files.push(rel);
            }
        }
        let results = Results {
            config_hash: self.cfg.hash(),
            clean_fpr: fpr,
            full,
            node_only,
        };
        let rel = "results/results.json".to_string();
        let text = serde_json::to_string_pretty(&results).expect("results serialize");
        write_file(&self.path(&rel), text.as_bytes())?;
        files.push(rel);
        self.record(&files, |_| {})?;
        Ok(results)
    }

    /// Render `summary.md` from `results/results.json` without touching
    /// any model.
    pub fn report(&self) -> Result<String, HarnessError> {
        let p = self.path("results/results.json");
        let text = std::fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))?;
        let results: Results =
            serde_json::from_str(&text).map_err(|e| HarnessError::stage("report", format!("{}: {e}", p.display())))?;
        let mut summary = render_summary(&results.full, &results.node_only);
        summary.push_str(&format!(
            "\nClean-corpus region FPR at the calibrated thresholds: {:.4} (target {}).\n",
            results.clean_fpr, self.cfg.eval.target_fpr
        ));
        let rel = "summary.md".to_string();
        write_file(&self.path(&rel), summary.as_bytes())?;
        self.record(&[rel], |_| {})?;
        Ok(summary)
    }

    pub fn run(&self, stage: Stage) -> Result<(), HarnessError> {
        match stage {
            Stage::GenCorpus => {
                self.corpora(&self.world()?)?;
            }
            Stage::Train => {
                self.artifacts()?;
            }
            Stage::Attack => {
                let world = self.world()?;
                let corpora = self.corpora(&world)?;
                self.attacks(&world, &corpora.eval)?;
            }
            Stage::Detect => {
                self.detect()?;
            }
            Stage::Eval => {
                self.detect()?;
                self.report()?;
            }
            Stage::Report => {
                self.report()?;
            }
        }
        Ok(())
    }
}

impl Results {
    pub fn report(&self, attack: &str, features: ProfileFeatures) -> Option<&DetectionReport> {
        let list = match features {
            ProfileFeatures::Full => &self.full,
            ProfileFeatures::NodeOnly => &self.node_only,
        };
        list.iter().find(|r| r.attack == attack)
    }
}
