use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{roc_auc, RecallAtFpr, RocPoint};
use super::HarnessError;
use crate::guardians::ProfileFeatures;
use crate::redteam::{AttackKind, AttackedCorpus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub scene_id: u64,
    pub region_idx: usize,
    pub pred_cat: usize,
    pub recon_err: f64,
    /// True for perturbed regions.
    pub label: bool,
    pub flagged: bool,
    pub scorer: usize,
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectDetection {
    pub attacked: usize,
    /// Attacked objects with at least one flagged region.
    pub detected: usize,
    /// Attacked objects without any proposed region; counted as missed.
    pub no_region: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub attacked: usize,
    pub positives: usize,
    /// `None` when suppressed for lack of samples.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratTable {
    pub name: String,
    pub buckets: Vec<Bucket>,
}

impl StratTable {
    pub fn bucket(&self, label: &str) -> Option<&Bucket> {
        self.buckets.iter().find(|b| b.label == label)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub attack: String,
    pub features: ProfileFeatures,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
    /// AUC restricted to regions predicted as each category.
    pub per_category_auc: BTreeMap<usize, Option<f64>>,
    pub recall: Vec<RecallAtFpr>,
    /// Region-level rates at the calibrated thresholds.
    pub region_fpr: f64,
    pub region_tpr: f64,
    pub objects: ObjectDetection,
    /// Regions scored by the background autoencoder for lack of their own.
    pub fallback_regions: usize,
    pub strata: Vec<StratTable>,
    #[serde(skip)]
    pub records: Vec<RegionRecord>,
}

pub const PROPOSAL_BUCKETS: [(&str, usize, usize); 4] = [("1-3", 1, 3), ("3-6", 4, 6), ("6-9", 7, 9), ("9-12", 10, 12)];
pub const IOU_BUCKETS: [&str; 6] = ["0", "0-0.1", "0.1-0.2", "0.2-0.3", "0.3-0.4", "0.4-0.5"];

fn iou_bucket(iou: f64) -> Option<usize> {
    if iou <= 0.0 {
        Some(0)
    } else if iou <= 0.5 {
        Some(((iou * 10.0).ceil() as usize).clamp(1, 5))
    } else {
        None
    }
}

/// AUC of each stratum: positives of the stratum's attacked objects against
/// every negative region.
fn bucket_aucs(
    records: &[RegionRecord],
    scene_offsets: &[usize],
    attacked: &AttackedCorpus,
    labels: &[String],
    bucket_of: impl Fn(usize) -> Option<usize>,
    min_samples: usize,
) -> Result<Vec<Bucket>, HarnessError> {
    let negatives: Vec<f64> = records.iter().filter(|r| !r.label).map(|r| r.recon_err).collect();
    let mut pos: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    let mut count = vec![0usize; labels.len()];
    for (s, ann) in attacked.annotations.iter().enumerate() {
        let Some(b) = bucket_of(s) else { continue };
        count[b] += 1;
        for &i in &ann.positives {
            pos[b].push(records[scene_offsets[s] + i].recon_err);
        }
    }
    labels
        .iter()
        .enumerate()
        .map(|(b, label)| {
            let auc = if count[b] >= min_samples.max(1) && !negatives.is_empty() {
                let mut scores = pos[b].clone();
                let mut labels = vec![true; scores.len()];
                scores.extend_from_slice(&negatives);
                labels.resize(scores.len(), false);
                Some(roc_auc(&scores, &labels)?.1)
            } else {
                None
            };
            Ok(Bucket {
                label: label.clone(),
                attacked: count[b],
                positives: pos[b].len(),
                auc,
            })
        })
        .collect()
}

/// AUC per stratum of proposals per attacked object, objects per scene and,
/// for appearing attacks, IoU of the attacked region with ground truth.
pub fn stratified_report(
    records: &[RegionRecord],
    attacked: &AttackedCorpus,
    min_samples: usize,
) -> Result<Vec<StratTable>, HarnessError> {
    let mut offsets = Vec::with_capacity(attacked.corpus.scenes.len());
    let mut at = 0;
    for s in &attacked.corpus.scenes {
        offsets.push(at);
        at += s.proposals.len();
    }
    if at != records.len() {
        return Err(HarnessError::Metric(format!(
            "{} records for {at} regions",
            records.len()
        )));
    }
    let scenes = &attacked.corpus.scenes;
    let anns = &attacked.annotations;

    let proposal_count = |s: usize| -> usize {
        let a = &anns[s];
        match a.kind {
            AttackKind::Appear => {
                let b = &scenes[s].proposals[a.region].bbox;
                scenes[s].proposals.iter().filter(|p| p.bbox.iou(b) >= 0.5).count()
            }
            _ => a.positives.len(),
        }
    };
    let labels: Vec<String> = PROPOSAL_BUCKETS.iter().map(|b| b.0.to_string()).collect();
    let mut tables = vec![StratTable {
        name: "proposals per object".into(),
        buckets: bucket_aucs(
            records,
            &offsets,
            attacked,
            &labels,
            |s| {
                let n = proposal_count(s);
                PROPOSAL_BUCKETS.iter().position(|&(_, lo, hi)| n >= lo && n <= hi)
            },
            min_samples,
        )?,
    }];

    let max_objects = scenes.iter().map(|s| s.objects.len()).max().unwrap_or(0).max(1);
    let labels: Vec<String> = (1..=max_objects).map(|k| k.to_string()).collect();
    tables.push(StratTable {
        name: "objects per scene".into(),
        buckets: bucket_aucs(
            records,
            &offsets,
            attacked,
            &labels,
            |s| scenes[s].objects.len().checked_sub(1),
            min_samples,
        )?,
    });

    if anns.iter().any(|a| a.kind == AttackKind::Appear) {
        let labels: Vec<String> = IOU_BUCKETS.iter().map(|s| s.to_string()).collect();
        tables.push(StratTable {
            name: "IoU with ground truth".into(),
            buckets: bucket_aucs(
                records,
                &offsets,
                attacked,
                &labels,
                |s| iou_bucket(scenes[s].max_iou_with_objects(anns[s].region)),
                min_samples,
            )?,
        });
    }
    Ok(tables)
}

pub fn write_records_csv(path: &Path, records: &[RegionRecord]) -> Result<(), HarnessError> {
    let mut out = String::from("scene_id,region_idx,pred_cat,recon_err,label\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{:?},{}",
            r.scene_id,
            r.region_idx,
            r.pred_cat,
            r.recon_err,
            u8::from(r.label)
        )
        .expect("write to string");
    }
    write_file(path, out.as_bytes())
}

/// One CSV row: scene id, region index, predicted category, error, label.
pub type RecordRow = (u64, usize, usize, f64, bool);

pub fn read_records_csv(path: &Path) -> Result<Vec<RecordRow>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || HarnessError::Metric(format!("{}: malformed row {l:?}", path.display()));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
                f[3].parse().map_err(|_| bad())?,
                f[4] == "1",
            ))
        })
        .collect()
}

pub fn write_roc_csv(path: &Path, roc: &[RocPoint]) -> Result<(), HarnessError> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in roc {
        writeln!(out, "{:?},{:?},{:?}", p.threshold, p.fpr, p.tpr).expect("write to string");
    }
    write_file(path, out.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let mut f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(path, e))
}

const COLUMNS: [(&str, &str); 6] = [
    ("digital-miscategorize", "Miscateg"),
    ("digital-hide", "Hiding"),
    ("digital-appear", "Appearing"),
    ("physical-miscategorize", "Miscateg"),
    ("physical-hide", "Hiding"),
    ("physical-appear", "Appearing"),
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |a| format!("{a:.3}"))
}

fn auc_row(name: &str, reports: &[DetectionReport]) -> String {
    let cells: Vec<String> = COLUMNS
        .iter()
        .map(|(key, _)| cell(reports.iter().find(|r| r.attack == *key).map(|r| r.auc)))
        .collect();
    format!("| {name} | {} |\n", cells.join(" | "))
}

/// Markdown summary: the AUC table in the six-attack layout, then recall,
/// calibration and stratified tables.
pub fn render_summary(full: &[DetectionReport], node_only: &[DetectionReport]) -> String {
    let mut s = String::new();
    s.push_str("# Detection results (synthetic world)\n\n");
    s.push_str("Region-level ROC-AUC. Numbers come from the synthetic desk-scale world, not from real images.\n\n");
    s.push_str("| Method | Digital Miscateg | Digital Hiding | Digital Appearing | Physical Miscateg | Physical Hiding | Physical Appearing |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    if !node_only.is_empty() {
        s.push_str(&auc_row("SCEME (node features only)", node_only));
    }
    s.push_str(&auc_row("SCEME", full));

    let extra: Vec<&DetectionReport> = full
        .iter()
        .filter(|r| !COLUMNS.iter().any(|(k, _)| *k == r.attack))
        .collect();
    if !extra.is_empty() {
        s.push_str("\nOther attacks:\n\n| Attack | AUC |\n|---|---|\n");
        for r in extra {
            let _ = writeln!(s, "| {} | {:.3} |", r.attack, r.auc);
        }
    }

    for r in full {
        let _ = writeln!(s, "\n## {}\n", r.attack);
        let _ = writeln!(
            s,
            "At calibrated thresholds: region FPR {:.3}, region TPR {:.3}, objects detected {}/{} ({} without regions), fallback-scored regions {}.\n",
            r.region_fpr, r.region_tpr, r.objects.detected, r.objects.attacked, r.objects.no_region, r.fallback_regions
        );
        s.push_str("| FPR | Recall |\n|---|---|\n");
        for e in &r.recall {
            let flag = if e.low_confidence { " (low confidence)" } else { "" };
            let _ = writeln!(s, "| {} | {:.3}{flag} |", e.fpr, e.recall);
        }
        for t in &r.strata {
            let _ = writeln!(s, "\n{}:\n", t.name);
            let head: Vec<&str> = t.buckets.iter().map(|b| b.label.as_str()).collect();
            let _ = writeln!(s, "| {} |", head.join(" | "));
            let _ = writeln!(s, "|{}", "---|".repeat(head.len()));
            let vals: Vec<String> = t.buckets.iter().map(|b| cell(b.auc)).collect();
            let _ = writeln!(s, "| {} |", vals.join(" | "));
        }
    }
    s
}
