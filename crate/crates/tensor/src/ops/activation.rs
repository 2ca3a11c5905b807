use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Elu,
    Relu,
    Sigmoid,
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let value = self.value(input);
        match kind {
            Activation::Elu => {
                let v = value.map(|x| if x > T::zero() { x } else { x.exp_m1() });
                self.push(v, Op::Elu { input })
            }
            Activation::Relu => {
                let v = value.map(|x| x.max(T::zero()));
                self.push(v, Op::Relu { input })
            }
            Activation::Sigmoid => {
                let v = value.map(sigmoid);
                self.push(v, Op::Sigmoid { input })
            }
        }
    }

    pub fn elu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Elu)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }
}
