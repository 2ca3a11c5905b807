use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// `(outer, axis_len, inner)` factorisation of a shape around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::dim(
            op,
            format!("axis {axis}"),
            format!("out of range for rank {}", shape.len()),
        ));
    }
    Ok(())
}

pub(crate) fn sum_backward<T: Real>(shape: &[usize], axis: usize, g: &[T]) -> Vec<T> {
    let (outer, len, inner) = split(shape, axis);
    let mut dx = vec![T::zero(); outer * len * inner];
    for o in 0..outer {
        for a in 0..len {
            let dst = &mut dx[(o * len + a) * inner..(o * len + a + 1) * inner];
            dst.copy_from_slice(&g[o * inner..(o + 1) * inner]);
        }
    }
    dx
}

pub(crate) fn normalize_backward<T: Real>(x: &Tensor<T>, axis: usize, eps: T, g: &[T]) -> Vec<T> {
    let (outer, len, inner) = split(x.shape(), axis);
    let xd = x.data();
    let mut dx = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + i;
            let s = (0..len).map(|a| xd[idx(a)]).sum::<T>() + eps;
            let gx = (0..len).map(|a| g[idx(a)] * xd[idx(a)]).sum::<T>();
            for a in 0..len {
                dx[idx(a)] = g[idx(a)] / s - gx / (s * s);
            }
        }
    }
    dx
}

impl<T: Real> Tape<T> {
    /// Sum along `axis`, dropping it unless `keep`.
    pub fn reduce_sum(&mut self, input: Var, axis: usize, keep: bool) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        check_axis("reduce_sum", &shape, axis)?;
        let (outer, len, inner) = split(&shape, axis);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for a in 0..len {
                let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
            }
        }
        let mut out_shape = shape.clone();
        if keep {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::ReduceSum { input, axis }))
    }

    /// Mean along `axis`.
    pub fn reduce_mean(&mut self, input: Var, axis: usize, keep: bool) -> Result<Var> {
        let len = *self
            .shape(input)
            .get(axis)
            .ok_or_else(|| TensorError::dim("reduce_mean", format!("axis {axis}"), "out of range"))?;
        let s = self.reduce_sum(input, axis, keep)?;
        Ok(self.scale(s, T::one() / T::from_usize(len.max(1)).unwrap()))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum_all(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::SumAll { input })
    }

    /// `x / (sum_axis(x) + eps)`: rescales each slice along `axis` to sum to
    /// one (for non-negative input).
    pub fn normalize_sum(&mut self, input: Var, axis: usize, eps: T) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        check_axis("normalize_sum", &shape, axis)?;
        let (outer, len, inner) = split(&shape, axis);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let s = (0..len).map(|a| x[idx(a)]).sum::<T>() + eps;
                for a in 0..len {
                    out[idx(a)] = x[idx(a)] / s;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::NormalizeSum { input, axis, eps }))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|x| x * factor);
        self.push(value, Op::Scale { input, factor })
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input }))
    }
}
