//! Adam parameter updates with bias correction.

use crate::diffcore::Tensor;
use crate::error::{KdError, Result};
use crate::scalar::Scalar;

pub(crate) struct AdamHyper<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

/// One Adam step over the canonical parameter list. `step` is the
/// already-incremented step counter used for bias correction. Aborts on a
/// non-finite gradient, naming the parameter.
pub(crate) fn adam_step<T: Scalar>(
    tensors: &mut [&mut Tensor<T>],
    m: &mut [Tensor<T>],
    v: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    names: &[String],
    step: u64,
    hyper: &AdamHyper<T>,
) -> Result<()> {
    debug_assert_eq!(tensors.len(), grads.len());
    debug_assert_eq!(tensors.len(), m.len());
    debug_assert_eq!(tensors.len(), v.len());

    let one = T::one();
    let t = step as i32;
    let m_correction = one - hyper.beta1.powi(t);
    let v_correction = one - hyper.beta2.powi(t);

    for i in 0..tensors.len() {
        if !grads[i].is_finite() {
            return Err(KdError::NonFinite(format!(
                "gradient for parameter '{}'",
                names[i]
            )));
        }
        if grads[i].shape() != tensors[i].shape() {
            return Err(KdError::ShapeMismatch {
                op: "adam update",
                lhs: tensors[i].shape_string(),
                rhs: grads[i].shape_string(),
            });
        }
        let theta = tensors[i].data_mut();
        let m_buf = m[i].data_mut();
        let v_buf = v[i].data_mut();
        let g = grads[i].data();
        for j in 0..theta.len() {
            m_buf[j] = hyper.beta1 * m_buf[j] + (one - hyper.beta1) * g[j];
            v_buf[j] = hyper.beta2 * v_buf[j] + (one - hyper.beta2) * g[j] * g[j];
            let m_hat = m_buf[j] / m_correction;
            let v_hat = v_buf[j] / v_correction;
            theta[j] = theta[j] - hyper.lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper() -> AdamHyper<f64> {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut theta = Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let mut m = vec![theta.zeros_like()];
        let mut v = vec![theta.zeros_like()];
        let grads = vec![theta.zeros_like()];
        let before = theta.clone();
        adam_step(
            &mut [&mut theta],
            &mut m,
            &mut v,
            &grads,
            &["w".to_string()],
            1,
            &hyper(),
        )
        .unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // Bias-corrected first step: m̂ = g, v̂ = g², update = lr·g/(|g| + ε).
        let g_val = 2.5;
        let mut theta = Tensor::scalar(0.0);
        let mut m = vec![theta.zeros_like()];
        let mut v = vec![theta.zeros_like()];
        let grads = vec![Tensor::scalar(g_val)];
        adam_step(
            &mut [&mut theta],
            &mut m,
            &mut v,
            &grads,
            &["w".to_string()],
            1,
            &hyper(),
        )
        .unwrap();
        let expected = -1e-3 * g_val / (g_val + 1e-8);
        assert!((theta.item() - expected).abs() < 1e-15);
        assert!((theta.item().abs() - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut theta = Tensor::scalar(0.0);
        let mut m = vec![theta.zeros_like()];
        let mut v = vec![theta.zeros_like()];
        let grads = vec![Tensor::scalar(f64::NAN)];
        let err = adam_step(
            &mut [&mut theta],
            &mut m,
            &mut v,
            &grads,
            &["classifier.w2".to_string()],
            1,
            &hyper(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("classifier.w2"));
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut theta = Tensor::from_rows(&[vec![0.5, -0.5]]).unwrap();
            let mut m = vec![theta.zeros_like()];
            let mut v = vec![theta.zeros_like()];
            for step in 1..=5 {
                let grads = vec![Tensor::from_rows(&[vec![0.1 * step as f64, -0.2]]).unwrap()];
                adam_step(
                    &mut [&mut theta],
                    &mut m,
                    &mut v,
                    &grads,
                    &["w".to_string()],
                    step as u64,
                    &hyper(),
                )
                .unwrap();
            }
            theta.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
