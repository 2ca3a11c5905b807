use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    /// `input · weightᵀ + bias` for `B x D` input and `K x D` weight.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "linear";
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 {
            return Err(TensorError::dim(OP, "input rank", format!("expected 2, got {xs:?}")));
        }
        if ws.len() != 2 || ws[1] != xs[1] {
            return Err(TensorError::dim(
                OP,
                "in_features",
                format!("input {xs:?} incompatible with weight {ws:?}"),
            ));
        }
        if self.shape(bias) != [ws[0]] {
            return Err(TensorError::dim(
                OP,
                "bias",
                format!("bias {:?} does not match {} outputs", self.shape(bias), ws[0]),
            ));
        }
        let (batch, d, k) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); batch * k];
        for row in out.chunks_exact_mut(k) {
            row.copy_from_slice(self.value(bias).data());
        }
        T::gemm(
            batch,
            d,
            k,
            T::one(),
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            T::one(),
            &mut out,
        );
        let value = Tensor::new([batch, k], out)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }))
    }
}
