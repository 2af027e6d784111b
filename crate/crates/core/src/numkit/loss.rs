use super::{softmax, NumError};

pub const DEFAULT_SMOOTH_L1_ALPHA: f64 = 1.0;

#[inline]
pub fn smooth_l1_scalar(d: f64, alpha: f64) -> f64 {
    let a = d.abs();
    if a <= alpha {
        0.5 * d * d
    } else {
        alpha * (a - 0.5 * alpha)
    }
}

/// Mean elementwise Huber-style loss between `x` and `y`.
pub fn smooth_l1(x: &[f64], y: &[f64], alpha: f64) -> Result<f64, NumError> {
    if x.len() != y.len() {
        return Err(NumError::Shape {
            op: "smooth_l1",
            expected: x.len(),
            got: y.len(),
        });
    }
    if !(alpha > 0.0) {
        return Err(NumError::Contract("smooth_l1: alpha must be positive"));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = x.iter().zip(y).map(|(a, b)| smooth_l1_scalar(a - b, alpha)).sum();
    Ok(sum / x.len() as f64)
}

/// Gradient of [`smooth_l1`] with respect to `x`.
pub fn smooth_l1_grad(x: &[f64], y: &[f64], alpha: f64) -> Vec<f64> {
    let n = x.len().max(1) as f64;
    x.iter().zip(y).map(|(a, b)| (a - b).clamp(-alpha, alpha) / n).collect()
}

/// Cross-entropy of `softmax(logits)` against class `target`, with the
/// logit gradient.
pub fn cross_entropy_with_logits(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(logits);
    let loss = -p[target].max(f64::MIN_POSITIVE).ln();
    p[target] -= 1.0;
    (loss, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_residual_is_zero() {
        assert_eq!(smooth_l1(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn knee_value_and_continuity() {
        let alpha = 0.7;
        let at = smooth_l1(&[alpha], &[0.0], alpha).unwrap();
        assert!((at - 0.5 * alpha * alpha).abs() < 1e-15);
        let just_past = smooth_l1_scalar(alpha + 1e-9, alpha);
        assert!((just_past - at).abs() < 1e-8);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (loss, g) = cross_entropy_with_logits(&[1.0, 2.0, 0.5], 1);
        assert!(loss > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!(g[1] < 0.0);
    }

    #[test]
    fn shape_and_alpha_errors() {
        assert!(smooth_l1(&[1.0], &[1.0, 2.0], 1.0).is_err());
        assert!(smooth_l1(&[1.0], &[1.0], 0.0).is_err());
    }
}
