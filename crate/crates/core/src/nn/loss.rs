use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// `-log softmax(logits)[target]` and its gradient `softmax(logits) - onehot(target)`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::Index {
            index: target,
            limit: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = grad.iter().sum();
    let loss = sum.ln() - (logits[target] - max);
    grad.iter_mut().for_each(|p| *p /= sum);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_give_ln_v() {
        for v in [2usize, 7, 300] {
            let (loss, _) = softmax_cross_entropy(&vec![0.37; v], 1).unwrap();
            assert!((loss - (v as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_prediction() {
        let (loss, grad) = softmax_cross_entropy(&[10.0, -10.0], 0).unwrap();
        // ln(1 + e^-20)
        let expect = (-20.0f64).exp().ln_1p();
        assert!((loss - expect).abs() < 1e-15);
        assert!((loss - 2.06e-9).abs() < 1e-11);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn target_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0, 1.0], 2),
            Err(Error::Index { index: 2, limit: 2 })
        ));
    }

    proptest! {
        #[test]
        fn gradient_sums_to_zero(logits in prop::collection::vec(-50.0f64..50.0, 2..40), t in 0usize..40) {
            let t = t % logits.len();
            let (loss, grad) = softmax_cross_entropy(&logits, t).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
