use crate::error::{Result, TensorError};
use crate::scalar::{lit, Real};
use crate::tensor::Tensor;

/// A trainable tensor together with the gradient accumulated for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(numel: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![T::zero(); numel],
            v: vec![T::zero(); numel],
            step: 0,
            config,
        }
    }

    pub fn for_params(params: &[Parameter<T>], config: AdamConfig) -> Vec<Self> {
        params.iter().map(|p| Self::new(p.numel(), config)).collect()
    }
}

/// One bias-corrected Adam update of every parameter. Gradients are consumed
/// (left as `None`).
pub fn adam_step<T: Real>(params: &mut [Parameter<T>], states: &mut [AdamState<T>], lr: f64) -> Result<()> {
    if params.len() != states.len() {
        return Err(TensorError::State(format!(
            "{} parameters but {} optimizer states",
            params.len(),
            states.len()
        )));
    }
    for (p, s) in params.iter().zip(states.iter()) {
        if p.grad.is_none() {
            return Err(TensorError::State(format!("parameter {} has no gradient", p.name)));
        }
        if s.m.len() != p.numel() || s.v.len() != p.numel() {
            return Err(TensorError::State(format!(
                "optimizer state for {} has {} entries, parameter has {}",
                p.name,
                s.m.len(),
                p.numel()
            )));
        }
    }
    for (p, s) in params.iter_mut().zip(states.iter_mut()) {
        let grad = p.grad.take().expect("checked above");
        s.step += 1;
        let c = s.config;
        let bc1 = 1.0 - c.beta1.powf(s.step as f64);
        let bc2 = 1.0 - c.beta2.powf(s.step as f64);
        let (b1, b2): (T, T) = (lit(c.beta1), lit(c.beta2));
        let step_size: T = lit(lr / bc1);
        let inv_bc2_sqrt: T = lit(1.0 / bc2.sqrt());
        let eps: T = lit(c.epsilon);
        for (((w, &g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(s.m.iter_mut())
            .zip(s.v.iter_mut())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *w -= step_size * *m / ((*v).sqrt() * inv_bc2_sqrt + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Parameter<f64> {
        Parameter::new("x", Tensor::new([1], vec![v]).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = vec![scalar_param(1.0)];
        let mut s = AdamState::for_params(&p, AdamConfig::default());
        p[0].grad = Some(vec![0.0]);
        adam_step(&mut p, &mut s, 0.001).unwrap();
        assert_eq!(p[0].value.data(), &[1.0]);
        assert_eq!(s[0].step, 1);
        assert!(p[0].grad.is_none());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![scalar_param(1.0)];
        let mut s = AdamState::for_params(&p, AdamConfig::default());
        p[0].grad = Some(vec![0.5]);
        adam_step(&mut p, &mut s, 0.001).unwrap();
        // mhat = 0.5, vhat = 0.25 => step = lr * 0.5 / (0.5 + 1e-8)
        let want = 1.0 - 0.001 * 0.5 / (0.5 + 1e-8);
        assert!((p[0].value.data()[0] - want).abs() < 1e-15);
        assert!((p[0].value.data()[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn minimizes_parabola() {
        let mut p = vec![scalar_param(1.0)];
        let mut s = AdamState::for_params(&p, AdamConfig::default());
        for _ in 0..100 {
            let x = p[0].value.data()[0];
            p[0].grad = Some(vec![2.0 * x]);
            adam_step(&mut p, &mut s, 0.1).unwrap();
        }
        assert!(p[0].value.data()[0].abs() < 0.05, "x = {}", p[0].value.data()[0]);
    }

    #[test]
    fn missing_gradient_is_state_error() {
        let mut p = vec![scalar_param(1.0)];
        let mut s = AdamState::for_params(&p, AdamConfig::default());
        assert!(matches!(adam_step(&mut p, &mut s, 0.1), Err(TensorError::State(_))));
        assert_eq!(s[0].step, 0);
    }
}
