use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::dim(OP, "logits rank", format!("expected 2, got {shape:?}")));
        }
        let (batch, k) = (shape[0], shape[1]);
        if labels.len() != batch {
            return Err(TensorError::dim(
                OP,
                "batch",
                format!("{} labels for {batch} rows", labels.len()),
            ));
        }
        if batch == 0 {
            return Err(TensorError::invalid(OP, "empty batch"));
        }
        if let Some((row, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(TensorError::invalid(
                OP,
                format!("label {bad} at row {row} outside [0, {k})"),
            ));
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); batch * k];
        let mut total = T::zero();
        for (row, &label) in labels.iter().enumerate() {
            let z = &x[row * k..(row + 1) * k];
            let m = z.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = z.iter().map(|&v| (v - m).exp()).sum();
            let log_denom = denom.ln();
            for (p, &v) in probs[row * k..(row + 1) * k].iter_mut().zip(z) {
                *p = (v - m).exp() / denom;
            }
            total += log_denom - (z[label] - m);
        }
        let loss = total / T::from_usize(batch).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor, TensorError};

    #[test]
    fn uniform_logits_give_log_k() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([3, 50]));
        let l = tape.softmax_cross_entropy(x, &[0, 17, 49]).unwrap();
        assert!((tape.value(l).item() - 50f64.ln()).abs() < 1e-12);
        assert!((tape.value(l).item() - 3.912).abs() < 1e-3);
    }

    #[test]
    fn confident_logit_closed_form() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([1, 2], vec![10.0, 0.0]).unwrap());
        let l = tape.softmax_cross_entropy(x, &[0]).unwrap();
        let want = (1.0 + (-10f64).exp()).ln();
        assert!((tape.value(l).item() - want).abs() < 1e-15);
        assert!((tape.value(l).item() - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn huge_logits_stay_finite() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new([1, 3], vec![1e4, -1e4, 0.0]).unwrap());
        let l = tape.softmax_cross_entropy(x, &[1]).unwrap();
        assert!(tape.value(l).item().is_finite());
    }

    #[test]
    fn label_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([1, 4]));
        assert!(matches!(
            tape.softmax_cross_entropy(x, &[4]),
            Err(TensorError::InvalidInput { .. })
        ));
    }
}
