use serde::{Deserialize, Serialize};

use crate::numkit::{dot, softmax, Mat};

/// Frozen stand-in for the detector's second stage: one prototype per
/// category plus background, and a linear nearest-prototype classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorStub {
    /// `C + 1` prototypes; the last one is background.
    pub prototypes: Vec<Vec<f64>>,
    /// `(C + 1) × D` weights; row `k` is `prototype_k`.
    pub weights: Mat,
    /// `−‖prototype_k‖² / 2`.
    pub bias: Vec<f64>,
}

impl DetectorStub {
    pub fn from_prototypes(prototypes: Vec<Vec<f64>>) -> Self {
        let k = prototypes.len();
        let d = prototypes[0].len();
        let weights = Mat::from_vec(k, d, prototypes.concat()).expect("ragged prototypes");
        let bias = prototypes.iter().map(|p| -0.5 * dot(p, p)).collect();
        DetectorStub {
            prototypes,
            weights,
            bias,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.prototypes.len()
    }

    pub fn background(&self) -> usize {
        self.prototypes.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, r: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        self.weights.matvec_acc(r, &mut z);
        z
    }

    pub fn probabilities(&self, r: &[f64]) -> Vec<f64> {
        softmax(&self.logits(r))
    }

    /// Smallest pairwise L2 distance between prototypes.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.prototypes.len() {
            for j in i + 1..self.prototypes.len() {
                let d: f64 = self.prototypes[i]
                    .iter()
                    .zip(&self.prototypes[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(d);
            }
        }
        best
    }
}

/// Second-stage prediction: argmax label (lowest index on ties) and its
/// normalized score.
pub fn detect_second_stage(stub: &DetectorStub, r: &[f64]) -> (usize, f64) {
    assert_eq!(r.len(), stub.dim(), "feature dimension mismatch");
    let p = stub.probabilities(r);
    let mut best = 0;
    for k in 1..p.len() {
        if p[k] > p[best] {
            best = k;
        }
    }
    (best, p[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DetectorStub {
        DetectorStub::from_prototypes(vec![vec![3.0, 0.0, 0.0], vec![0.0, 3.0, 0.0], vec![0.0, 0.0, -3.0]])
    }

    #[test]
    fn prototype_is_recognized_confidently() {
        let stub = toy();
        for c in 0..3 {
            let (label, conf) = detect_second_stage(&stub, &stub.prototypes[c].clone());
            assert_eq!(label, c);
            assert!(conf > 0.9);
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let stub = DetectorStub::from_prototypes(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (label, conf) = detect_second_stage(&stub, &[0.5, 0.5]);
        assert_eq!(label, 0);
        assert!((conf - 0.5).abs() < 1e-12);
    }
}
