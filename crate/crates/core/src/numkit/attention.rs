use super::{dot, NumError};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Normalized exponential weights of `query·key / sqrt(dim)`.
pub fn attention_weights(query: &[f64], keys: &[&[f64]]) -> Result<Vec<f64>, NumError> {
    if keys.is_empty() {
        return Err(NumError::Contract("attention_weights: empty key list"));
    }
    let scale = 1.0 / (query.len().max(1) as f64).sqrt();
    let mut logits = Vec::with_capacity(keys.len());
    for k in keys {
        if k.len() != query.len() {
            return Err(NumError::Shape {
                op: "attention_weights",
                expected: query.len(),
                got: k.len(),
            });
        }
        logits.push(dot(query, k) * scale);
    }
    Ok(softmax(&logits))
}

/// Softmax backward: `∂L/∂logit_j = w_j (∂L/∂w_j − Σ_k w_k ∂L/∂w_k)`.
pub fn attention_backward(weights: &[f64], d_weights: &[f64]) -> Vec<f64> {
    let inner: f64 = weights.iter().zip(d_weights).map(|(w, d)| w * d).sum();
    weights.iter().zip(d_weights).map(|(w, d)| w * (d - inner)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_keys_are_uniform() {
        let k = [0.3, -1.0, 2.0];
        let w = attention_weights(&[1.0, 2.0, 3.0], &[&k, &k, &k, &k]).unwrap();
        for x in w {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_key_gets_all_weight() {
        assert_eq!(attention_weights(&[5.0], &[&[9.0]]).unwrap(), vec![1.0]);
    }

    #[test]
    fn three_keys_match_direct_exp_sum() {
        let q = [1.0, -0.5];
        let keys: [&[f64]; 3] = [&[0.2, 0.1], &[-1.0, 0.4], &[2.0, 2.0]];
        let w = attention_weights(&q, &keys).unwrap();
        let s = 2f64.sqrt();
        let e: Vec<f64> = keys.iter().map(|k| ((q[0] * k[0] + q[1] * k[1]) / s).exp()).collect();
        let z: f64 = e.iter().sum();
        for (a, b) in w.iter().zip(&e) {
            assert!((a - b / z).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_keys_violate_contract() {
        assert!(matches!(attention_weights(&[1.0], &[]), Err(NumError::Contract(_))));
    }
}
