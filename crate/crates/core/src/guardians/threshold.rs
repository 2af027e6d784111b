use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GuardError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    PerCategory,
    /// One threshold over the pooled benign errors of all categories.
    Global,
}

/// Reconstruction-error cutoffs keyed by scoring autoencoder category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub target_fpr: f64,
    pub mode: ThresholdMode,
    pub thresholds: BTreeMap<usize, f64>,
    /// Categories with an autoencoder but no held-out benign profiles.
    pub excluded: Vec<usize>,
}

/// Smallest `t` with `#{e > t} / n ≤ fpr`, for `n > 0` errors.
pub fn quantile_threshold(errors: &[f64], fpr: f64) -> f64 {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let allowed = ((fpr.clamp(0.0, 1.0) * n as f64) + 1e-9).floor() as usize;
    if allowed >= n {
        return 0.0;
    }
    sorted[n - allowed - 1]
}

impl ThresholdTable {
    /// Calibrate from benign errors grouped by scoring category.
    pub fn calibrate(
        errors: &BTreeMap<usize, Vec<f64>>,
        categories: &[usize],
        target_fpr: f64,
        mode: ThresholdMode,
    ) -> Result<ThresholdTable, GuardError> {
        if !(0.0..=1.0).contains(&target_fpr) {
            return Err(GuardError::Config(format!("target FPR {target_fpr} outside [0, 1]")));
        }
        let mut thresholds = BTreeMap::new();
        let mut excluded = Vec::new();
        let pooled: Vec<f64> = errors.values().flatten().copied().collect();
        let global = (!pooled.is_empty()).then(|| quantile_threshold(&pooled, target_fpr));
        for &c in categories {
            match errors.get(&c).filter(|e| !e.is_empty()) {
                Some(e) => {
                    let t = match mode {
                        ThresholdMode::PerCategory => quantile_threshold(e, target_fpr),
                        ThresholdMode::Global => global.expect("pooled errors nonempty"),
                    };
                    thresholds.insert(c, t);
                }
                None => excluded.push(c),
            }
        }
        if thresholds.values().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(GuardError::Config(
                "calibrated threshold is not a finite non-negative value".into(),
            ));
        }
        Ok(ThresholdTable {
            target_fpr,
            mode,
            thresholds,
            excluded,
        })
    }

    pub fn get(&self, category: usize) -> Option<f64> {
        self.thresholds.get(&category).copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("target_fpr = {:?}\n", self.target_fpr));
        let mode = match self.mode {
            ThresholdMode::PerCategory => "per_category",
            ThresholdMode::Global => "global",
        };
        s.push_str(&format!("mode = {mode}\n"));
        let ex: Vec<String> = self.excluded.iter().map(|c| c.to_string()).collect();
        s.push_str(&format!("excluded = {}\n", ex.join(",")));
        for (c, t) in &self.thresholds {
            s.push_str(&format!("category.{c} = {t:?}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<ThresholdTable, GuardError> {
        let bad = |msg: String| GuardError::Config(format!("threshold file: {msg}"));
        let mut target_fpr = None;
        let mut mode = None;
        let mut excluded = Vec::new();
        let mut thresholds = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("line {}: expected key = value", n + 1)))?;
            let num = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", n + 1)));
            match k {
                "target_fpr" => target_fpr = Some(num(v)?),
                "mode" => {
                    mode = Some(match v {
                        "per_category" => ThresholdMode::PerCategory,
                        "global" => ThresholdMode::Global,
                        other => return Err(bad(format!("unknown mode {other}"))),
                    })
                }
                "excluded" => {
                    excluded = v
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| s.trim().parse::<usize>().map_err(|e| bad(e.to_string())))
                        .collect::<Result<_, _>>()?
                }
                _ => {
                    let c = k
                        .strip_prefix("category.")
                        .and_then(|c| c.parse::<usize>().ok())
                        .ok_or_else(|| bad(format!("unknown key {k}")))?;
                    let t = num(v)?;
                    if !t.is_finite() || t < 0.0 {
                        return Err(bad(format!("threshold for {c} must be finite and >= 0")));
                    }
                    thresholds.insert(c, t);
                }
            }
        }
        Ok(ThresholdTable {
            target_fpr: target_fpr.ok_or_else(|| bad("missing target_fpr".into()))?,
            mode: mode.ok_or_else(|| bad("missing mode".into()))?,
            thresholds,
            excluded,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), GuardError> {
        std::fs::write(path, self.to_text()).map_err(|e| GuardError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ThresholdTable, GuardError> {
        let text = std::fs::read_to_string(path).map_err(|e| GuardError::Io(e.to_string()))?;
        ThresholdTable::from_text(&text)
    }
}
