use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::guardians::quantile_threshold;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// `+inf` for the origin point; stored as `null` in JSON.
    #[serde(deserialize_with = "null_as_infinity")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// ROC curve (one point per distinct score, from the strictest cutoff down)
/// and its area, equal to the Mann–Whitney statistic with ties counted 0.5.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(Vec<RocPoint>, f64), HarnessError> {
    if scores.len() != labels.len() {
        return Err(HarnessError::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(HarnessError::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(HarnessError::Metric(
            "ROC needs both positive and negative samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut curve = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut dtp, mut dfp) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                dtp += 1;
            } else {
                dfp += 1;
            }
            i += 1;
        }
        // trapezoid over the tie group: pairs tied at s count one half
        area += dfp as f64 * (tp as f64 + 0.5 * dtp as f64);
        tp += dtp;
        fp += dfp;
        curve.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok((curve, area / (pos as f64 * neg as f64)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallAtFpr {
    pub fpr: f64,
    pub threshold: f64,
    pub recall: f64,
    /// Fewer than `1 / fpr` negatives back this entry.
    pub low_confidence: bool,
}

/// Recall at cutoffs placed at benign quantiles for each requested FPR.
pub fn recall_at_fpr(scores: &[f64], labels: &[bool], fprs: &[f64]) -> Result<Vec<RecallAtFpr>, HarnessError> {
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(s, _)| *s)
        .collect();
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    if neg.is_empty() || pos.is_empty() {
        return Err(HarnessError::Metric(
            "recall needs both positive and negative samples".into(),
        ));
    }
    Ok(fprs
        .iter()
        .map(|&f| {
            let t = quantile_threshold(&neg, f);
            let hit = pos.iter().filter(|&&s| s > t || f >= 1.0).count();
            RecallAtFpr {
                fpr: f,
                threshold: t,
                recall: hit as f64 / pos.len() as f64,
                low_confidence: (neg.len() as f64) * f < 1.0,
            }
        })
        .collect())
}
