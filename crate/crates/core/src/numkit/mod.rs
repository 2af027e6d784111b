//! Dense numerics for the context model and the autoencoders.
//!
//! Everything here is `f64` and hand-differentiated. Composite models build
//! their backward passes out of the per-kernel backward functions in this
//! module and verify them with [`grad_check`].

mod attention;
mod gradcheck;
mod gru;
mod loss;
mod optim;
mod tensor;

pub use attention::{attention_backward, attention_weights, softmax};
pub use gradcheck::{grad_check, grad_check_indices, GradCheck};
pub use gru::{gru_backward, gru_step, GruCache, GruCellGrads, GruCellParams, GruOutput};
pub use loss::{cross_entropy_with_logits, smooth_l1, smooth_l1_grad, smooth_l1_scalar, DEFAULT_SMOOTH_L1_ALPHA};
pub use optim::{OptimKind, OptimizerState, Schedule};
pub use tensor::{check_finite, dot, require_len, Mat, ParamSet};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: shape mismatch (expected {expected}, got {got})")]
    Shape {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("{0}")]
    Contract(&'static str),
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn tanh_vec(xs: &mut [f64]) {
    xs.iter_mut().for_each(|x| *x = x.tanh());
}

/// Backprop through `y = tanh(x)` given `y`.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }
}
