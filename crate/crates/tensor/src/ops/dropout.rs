use rand::Rng;

use crate::error::{Result, TensorError};
use crate::ops::Mode;
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};

impl<T: Real> Tape<T> {
    /// Inverted dropout: in training each element is zeroed with probability
    /// `rate` and survivors are scaled by `1 / (1 - rate)`. Identity in eval.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            let shape = self.shape(input).to_vec();
            return self.reshape(input, shape);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate)).unwrap();
        let mask: Vec<T> = (0..self.value(input).numel())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let x = self.value(input);
        let mut value = x.clone();
        value.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
        Ok(self.push(value, Op::Dropout { input, mask }))
    }
}
