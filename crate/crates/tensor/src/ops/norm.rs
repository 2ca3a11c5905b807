use crate::error::{Result, TensorError};
use crate::ops::Mode;
use crate::scalar::{lit, Real};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Running statistics and hyperparameters of one batch-norm layer. The
/// affine `gamma`/`beta` pair is trained as ordinary parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_hyper(channels, lit(0.1), lit(1e-5))
    }

    pub fn with_hyper(channels: usize, momentum: T, epsilon: T) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum,
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Input viewed as `batch x channels x inner`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ChannelLayout {
    batch: usize,
    channels: usize,
    inner: usize,
}

impl ChannelLayout {
    fn count(&self) -> usize {
        self.batch * self.inner
    }

    fn for_each_in_channel(&self, c: usize, mut f: impl FnMut(usize)) {
        for b in 0..self.batch {
            let start = (b * self.channels + c) * self.inner;
            (start..start + self.inner).for_each(&mut f);
        }
    }
}

pub(crate) struct BnGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub(crate) fn backward<T: Real>(
    layout: &ChannelLayout,
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    g: &[T],
    batch_stats: bool,
) -> BnGrads<T> {
    let n = T::from_usize(layout.count()).unwrap();
    let mut dx = vec![T::zero(); xhat.len()];
    let mut dgamma = vec![T::zero(); layout.channels];
    let mut dbeta = vec![T::zero(); layout.channels];
    for c in 0..layout.channels {
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        layout.for_each_in_channel(c, |i| {
            sum_g += g[i];
            sum_gx += g[i] * xhat[i];
        });
        dgamma[c] = sum_gx;
        dbeta[c] = sum_g;
        let scale = gamma[c] * inv_std[c];
        if batch_stats {
            layout.for_each_in_channel(c, |i| {
                dx[i] = scale * (g[i] - sum_g / n - xhat[i] * sum_gx / n);
            });
        } else {
            layout.for_each_in_channel(c, |i| dx[i] = scale * g[i]);
        }
    }
    BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

impl<T: Real> Tape<T> {
    /// Batch normalization over axis 1 of a rank >= 2 input.
    ///
    /// In [`Mode::Train`] the batch statistics normalize the input and the
    /// running statistics in `state` move towards them with `momentum`
    /// (unbiased variance). In [`Mode::Eval`] the running statistics are used.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        mode: Mode,
    ) -> Result<Var> {
        const OP: &str = "batch_norm";
        let xs = self.shape(input).to_vec();
        if xs.len() < 2 {
            return Err(TensorError::dim(OP, "input rank", format!("expected >= 2, got {xs:?}")));
        }
        let channels = xs[1];
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [channels] {
                return Err(TensorError::dim(
                    OP,
                    name,
                    format!("shape {:?} does not match {channels} channels", self.shape(v)),
                ));
            }
        }
        if state.channels() != channels || state.running_var.len() != channels {
            return Err(TensorError::dim(
                OP,
                "running stats",
                format!("state has {} channels, input has {channels}", state.channels()),
            ));
        }
        let layout = ChannelLayout {
            batch: xs[0],
            channels,
            inner: xs[2..].iter().product(),
        };
        if mode == Mode::Train && layout.count() == 0 {
            return Err(TensorError::invalid(OP, "empty batch in training mode"));
        }

        let x = self.value(input).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); channels];
        let n = layout.count();
        let nt = T::from_usize(n).unwrap();
        for c in 0..channels {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = T::zero();
                    layout.for_each_in_channel(c, |i| sum += x[i]);
                    let mean = sum / nt;
                    let mut sq = T::zero();
                    layout.for_each_in_channel(c, |i| sq += (x[i] - mean) * (x[i] - mean));
                    let var = sq / nt;
                    let unbiased = if n > 1 {
                        sq / T::from_usize(n - 1).unwrap()
                    } else {
                        var
                    };
                    let m = state.momentum;
                    state.running_mean[c] = (T::one() - m) * state.running_mean[c] + m * mean;
                    state.running_var[c] = (T::one() - m) * state.running_var[c] + m * unbiased;
                    (mean, var)
                }
                Mode::Eval => (state.running_mean[c], state.running_var[c].max(T::zero())),
            };
            let is = T::one() / (var + state.epsilon).sqrt();
            inv_std[c] = is;
            layout.for_each_in_channel(c, |i| {
                xhat[i] = (x[i] - mean) * is;
                out[i] = gv[c] * xhat[i] + bv[c];
            });
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                layout,
                batch_stats: mode == Mode::Train,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn affine(tape: &mut Tape<f64>, c: usize, g: f64, b: f64) -> (Var, Var) {
        (
            tape.leaf(Tensor::full([c], g), true),
            tape.leaf(Tensor::full([c], b), true),
        )
    }

    #[test]
    fn identity_on_normalized_batch() {
        // per channel values {-1, 1} => mean 0, biased variance 1
        let data = vec![-1.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0];
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([2, 2, 2], data.clone()).unwrap(), true);
        let (g, b) = affine(&mut tape, 2, 1.0, 0.0);
        let mut st = BatchNormState::new(2);
        let y = tape.batch_norm(x, g, b, &mut st, Mode::Train).unwrap();
        for (a, e) in tape.value(y).data().iter().zip(&data) {
            assert!((a - e).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_is_affine_only() {
        let data = vec![0.5, -2.0, 3.0, 4.0, -1.5, 0.0];
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([3, 2], data.clone()).unwrap());
        let (g, b) = affine(&mut tape, 2, 2.0, 1.0);
        let mut st = BatchNormState::with_hyper(2, 0.1, 0.0);
        let y = tape.batch_norm(x, g, b, &mut st, Mode::Eval).unwrap();
        for (a, e) in tape.value(y).data().iter().zip(&data) {
            assert!((a - (2.0 * e + 1.0)).abs() < 1e-12);
        }
        assert_eq!(st.running_mean, vec![0.0; 2]);
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::uniform([4, 3, 2, 2], -3.0, 5.0, &mut rng));
        let (g, b) = affine(&mut tape, 3, 1.0, 0.0);
        let mut st = BatchNormState::new(3);
        let y = tape.batch_norm(x, g, b, &mut st, Mode::Train).unwrap();
        let out = tape.value(y).data();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|bi| (0..4).map(move |s| (bi * 3 + c) * 4 + s))
                .map(|i| out[i])
                .collect();
            let mean = vals.iter().sum::<f64>() / 16.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([2, 1], vec![1.0, 3.0]).unwrap());
        let (g, b) = affine(&mut tape, 1, 1.0, 0.0);
        let mut st = BatchNormState::new(1);
        tape.batch_norm(x, g, b, &mut st, Mode::Train).unwrap();
        assert!((st.running_mean[0] - 0.2).abs() < 1e-12);
        // unbiased var of {1,3} is 2
        assert!((st.running_var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn empty_train_batch_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([0, 2]));
        let (g, b) = affine(&mut tape, 2, 1.0, 0.0);
        let mut st = BatchNormState::new(2);
        assert!(matches!(
            tape.batch_norm(x, g, b, &mut st, Mode::Train),
            Err(TensorError::InvalidInput { .. })
        ));
    }
}
