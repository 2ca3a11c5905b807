use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output shape when broadcasting two equal-rank shapes where every axis
/// either matches or is 1 on one side.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(TensorError::dim(
            "hadamard",
            "rank",
            format!("{a:?} vs {b:?}"),
        ));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(axis, (&x, &y))| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(TensorError::dim(
                "hadamard",
                format!("axis {axis}"),
                format!("{x} vs {y} in {a:?} and {b:?}"),
            )),
        })
        .collect()
}

/// Flat source offsets into `a` and `b` for every output element.
fn broadcast_offsets(a: &[usize], b: &[usize], out: &[usize]) -> Vec<(usize, usize)> {
    let sa = strides(a);
    let sb = strides(b);
    let so = strides(out);
    let numel: usize = out.iter().product();
    (0..numel)
        .map(|flat| {
            let (mut ia, mut ib) = (0, 0);
            for axis in 0..out.len() {
                let coord = (flat / so[axis]) % out[axis];
                if a[axis] != 1 {
                    ia += coord * sa[axis];
                }
                if b[axis] != 1 {
                    ib += coord * sb[axis];
                }
            }
            (ia, ib)
        })
        .collect()
}

pub(crate) fn hadamard_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &[T],
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    if a.shape() == b.shape() {
        let ga = want_a.then(|| g.iter().zip(b.data()).map(|(&g, &b)| g * b).collect());
        let gb = want_b.then(|| g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect());
        return (ga, gb);
    }
    let out = broadcast_shape(a.shape(), b.shape()).expect("validated in forward");
    let offsets = broadcast_offsets(a.shape(), b.shape(), &out);
    let mut ga = want_a.then(|| vec![T::zero(); a.numel()]);
    let mut gb = want_b.then(|| vec![T::zero(); b.numel()]);
    for (&(ia, ib), &gv) in offsets.iter().zip(g) {
        if let Some(ga) = ga.as_mut() {
            ga[ia] += gv * b.data()[ib];
        }
        if let Some(gb) = gb.as_mut() {
            gb[ib] += gv * a.data()[ia];
        }
    }
    (ga, gb)
}

impl<T: Real> Tape<T> {
    /// Elementwise product. Shapes must match, or have equal rank with size-1
    /// axes on either side (broadcast).
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let value = if sa == sb {
            Tensor::new(sa, av.iter().zip(bv).map(|(&x, &y)| x * y).collect())?
        } else {
            let out = broadcast_shape(&sa, &sb)?;
            let data = broadcast_offsets(&sa, &sb, &out)
                .into_iter()
                .map(|(ia, ib)| av[ia] * bv[ib])
                .collect();
            Tensor::new(out, data)?
        };
        Ok(self.push(value, Op::Hadamard { a, b }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_annihilator() {
        let mut tape = Tape::<f32>::new();
        let data = vec![1.5, -2.0, 0.25, 8.0];
        let a = tape.constant(Tensor::new([2, 2], data.clone()).unwrap());
        let ones = tape.constant(Tensor::ones([2, 2]));
        let zeros = tape.constant(Tensor::zeros([2, 2]));
        let p = tape.hadamard(a, ones).unwrap();
        assert_eq!(tape.value(p).data(), data.as_slice());
        let z = tape.hadamard(a, zeros).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn incompatible_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 2]));
        assert!(matches!(tape.hadamard(a, b), Err(TensorError::Dimension { .. })));
        let c = tape.constant(Tensor::zeros([6]));
        assert!(tape.hadamard(a, c).is_err());
    }

    #[test]
    fn broadcast_gradient_sums_over_channels() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::new([1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), true);
        let b = tape.leaf(Tensor::new([1, 1, 2], vec![10.0, 100.0]).unwrap(), true);
        let p = tape.hadamard(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[10.0, 200.0, 30.0, 400.0, 50.0, 600.0]);
        let loss = tape.sum_all(p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[9.0, 12.0]);
        assert_eq!(tape.grad(a).unwrap(), &[10.0, 100.0, 10.0, 100.0, 10.0, 100.0]);
    }
}
