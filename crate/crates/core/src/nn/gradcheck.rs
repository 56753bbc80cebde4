use crate::error::{Error, Result};

/// Maximum over coordinates of `|g_analytic - g_fd| / max(1, |g_fd|)`, where
/// `g_fd` is the central difference of `loss` at `params` with step `epsilon`.
pub fn gradient_error(
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    if !(1e-8..=1e-3).contains(&epsilon) {
        return Err(Error::Input(format!("epsilon {epsilon} outside [1e-8, 1e-3]")));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + epsilon;
        let up = loss(&work);
        work[i] = orig - epsilon;
        let down = loss(&work);
        work[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Input(format!("non-finite loss while perturbing parameter {i}")));
        }
        let fd = (up - down) / (2.0 * epsilon);
        let err = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Convenience form taking a closure that returns `(loss, gradient)`.
pub fn finite_difference_check(
    params: &[f64],
    epsilon: f64,
    mut loss_and_grad: impl FnMut(&[f64]) -> (f64, Vec<f64>),
) -> Result<f64> {
    let (base, analytic) = loss_and_grad(params);
    if !base.is_finite() {
        return Err(Error::Input("non-finite loss at the base point".into()));
    }
    gradient_error(params, &analytic, epsilon, |p| loss_and_grad(p).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = vec![0.3, -1.2, 4.0, 0.0];
        let err = finite_difference_check(&p, 1e-5, |v| {
            (0.5 * v.iter().map(|x| x * x).sum::<f64>(), v.to_vec())
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let err = finite_difference_check(&[1.0, 2.0], 1e-4, |v| (3.0, vec![0.0; v.len()])).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn detects_wrong_gradient() {
        let err = finite_difference_check(&[1.0], 1e-5, |v| (v[0] * v[0], vec![0.0])).unwrap();
        assert!((err - 1.0).abs() < 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_epsilon_and_non_finite() {
        assert!(finite_difference_check(&[1.0], 1e-1, |v| (v[0], vec![1.0])).is_err());
        assert!(finite_difference_check(&[1.0], 1e-5, |_| (f64::NAN, vec![1.0])).is_err());
    }
}
