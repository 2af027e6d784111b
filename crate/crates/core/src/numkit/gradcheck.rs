use super::NumError;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Max over checked coordinates of `|analytic − numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    /// Coordinate attaining the max.
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Central-difference check of `analytic` against `f` at every coordinate.
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], epsilon: f64) -> Result<GradCheck, NumError>
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize> = (0..params.len()).collect();
    grad_check_indices(f, params, analytic, epsilon, &all)
}

/// Central-difference check restricted to `indices`.
pub fn grad_check_indices<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
    indices: &[usize],
) -> Result<GradCheck, NumError>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(NumError::Shape {
            op: "grad_check",
            expected: params.len(),
            got: analytic.len(),
        });
    }
    if !(epsilon > 0.0) {
        return Err(NumError::Contract("grad_check: epsilon must be positive"));
    }
    let mut p = params.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: indices.first().copied().unwrap_or(0),
        checked: 0,
    };
    for &i in indices {
        let orig = p[i];
        p[i] = orig + epsilon;
        let plus = f(&p);
        p[i] = orig - epsilon;
        let minus = f(&p);
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumError::NonFinite {
                what: "grad_check objective",
                index: i,
            });
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        if rel > worst.max_rel_error {
            worst.max_rel_error = rel;
            worst.worst_index = i;
        }
        worst.checked += 1;
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_sq(p: &[f64]) -> f64 {
        0.5 * p.iter().map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn exact_quadratic_passes() {
        let p = [0.3, -1.2, 4.0];
        let r = grad_check(half_sq, &p, &p, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let p = [3.0, -2.0, 5.0];
        let bad: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let r = grad_check(half_sq, &p, &bad, 1e-5).unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn non_finite_objective_errors() {
        let r = grad_check(|_| f64::NAN, &[1.0], &[0.0], 1e-5);
        assert!(r.is_err());
    }
}
