use crate::error::{Result, TensorError};
use crate::ops::{self, conv::ConvGeometry, norm::ChannelLayout};
use crate::optim::Parameter;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        layout: ChannelLayout,
        batch_stats: bool,
    },
    Elu {
        input: Var,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    ReduceSum {
        input: Var,
        axis: usize,
    },
    SumAll {
        input: Var,
    },
    Hadamard {
        a: Var,
        b: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    NormalizeSum {
        input: Var,
        axis: usize,
        eps: T,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Reshape {
        input: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records operations in execution order and replays them backwards.
///
/// A tape is built per training step. After [`Tape::backward`] the gradients
/// of every reachable leaf created with `requires_grad` are available through
/// [`Tape::grad`]. Running backward twice without [`Tape::zero_grad`] is an
/// error.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(value, requires_grad, Op::Leaf)
    }

    /// Constant input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf initialised from a parameter's current value.
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        self.leaf(p.value.clone(), true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, requires_grad, op)
    }

    fn push_node(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a one-element loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::State(
                "backward already ran on this tape; call zero_grad first".into(),
            ));
        }
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(TensorError::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(TensorError::State(
                "loss does not depend on any tensor that requires grad".into(),
            ));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (var, delta) in contributions {
                let target = &mut self.nodes[var.0];
                if !target.requires_grad {
                    continue;
                }
                match &mut target.grad {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += *d),
                    None => target.grad = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let grads = ops::conv::backward(
                    geom,
                    val(*input).data(),
                    val(*weight).data(),
                    g,
                    self.wants(*input),
                    self.wants(*weight),
                );
                if let Some(dx) = grads.input {
                    out.push((*input, dx));
                }
                if let Some(dw) = grads.weight {
                    out.push((*weight, dw));
                }
                if self.wants(*bias) {
                    out.push((*bias, ops::conv::bias_grad(geom, g)));
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let mut dx = vec![T::zero(); val(*input).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                out.push((*input, dx));
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                layout,
                batch_stats,
            } => {
                let grads = ops::norm::backward(layout, xhat, inv_std, val(*gamma).data(), g, *batch_stats);
                out.push((*input, grads.input));
                out.push((*gamma, grads.gamma));
                out.push((*beta, grads.beta));
            }
            Op::Elu { input } => {
                // for x <= 0, d/dx (e^x - 1) = y + 1
                let x = val(*input).data();
                let y = node.value.data();
                let dx = x
                    .iter()
                    .zip(y)
                    .zip(g)
                    .map(|((&x, &y), &g)| if x > T::zero() { g } else { g * (y + T::one()) })
                    .collect();
                out.push((*input, dx));
            }
            Op::Relu { input } => {
                let x = val(*input).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                out.push((*input, dx));
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                let dx = y
                    .iter()
                    .zip(g)
                    .map(|(&y, &g)| g * y * (T::one() - y))
                    .collect();
                out.push((*input, dx));
            }
            Op::ReduceSum { input, axis } => {
                out.push((*input, ops::reduce::sum_backward(val(*input).shape(), *axis, g)));
            }
            Op::SumAll { input } => {
                out.push((*input, vec![g[0]; val(*input).numel()]));
            }
            Op::Hadamard { a, b } => {
                let (ga, gb) = ops::elementwise::hadamard_backward(
                    val(*a),
                    val(*b),
                    g,
                    self.wants(*a),
                    self.wants(*b),
                );
                if let Some(ga) = ga {
                    out.push((*a, ga));
                }
                if let Some(gb) = gb {
                    out.push((*b, gb));
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = val(*input);
                let w = val(*weight);
                let (batch, d) = (x.shape()[0], x.shape()[1]);
                let k = w.shape()[0];
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); batch * d];
                    T::gemm(batch, k, d, T::one(), g, false, w.data(), false, T::zero(), &mut dx);
                    out.push((*input, dx));
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); k * d];
                    T::gemm(k, batch, d, T::one(), g, true, x.data(), false, T::zero(), &mut dw);
                    out.push((*weight, dw));
                }
                if self.wants(*bias) {
                    let mut db = vec![T::zero(); k];
                    for row in g.chunks_exact(k) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += *r);
                    }
                    out.push((*bias, db));
                }
            }
            Op::Dropout { input, mask } => {
                out.push((*input, g.iter().zip(mask).map(|(&g, &m)| g * m).collect()));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let batch = labels.len();
                let k = probs.len() / batch;
                let scale = g[0] / T::from_usize(batch).unwrap();
                let mut d = probs.clone();
                for (row, &label) in labels.iter().enumerate() {
                    d[row * k + label] -= T::one();
                }
                d.iter_mut().for_each(|v| *v *= scale);
                out.push((*logits, d));
            }
            Op::NormalizeSum { input, axis, eps } => {
                out.push((
                    *input,
                    ops::reduce::normalize_backward(val(*input), *axis, *eps, g),
                ));
            }
            Op::Scale { input, factor } => {
                out.push((*input, g.iter().map(|&v| v * *factor).collect()));
            }
            Op::Reshape { input } => {
                out.push((*input, g.to_vec()));
            }
        }
        out
    }
}

fn op_inputs<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Conv2d {
            input,
            weight,
            bias,
            ..
        }
        | Op::Linear {
            input,
            weight,
            bias,
        } => vec![*input, *weight, *bias],
        Op::BatchNorm {
            input, gamma, beta, ..
        } => vec![*input, *gamma, *beta],
        Op::Hadamard { a, b } => vec![*a, *b],
        Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        Op::MaxPool2d { input, .. }
        | Op::Elu { input }
        | Op::Relu { input }
        | Op::Sigmoid { input }
        | Op::ReduceSum { input, .. }
        | Op::SumAll { input }
        | Op::Dropout { input, .. }
        | Op::NormalizeSum { input, .. }
        | Op::Scale { input, .. }
        | Op::Reshape { input } => vec![*input],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap(), true);
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_square_sum_is_twice_input() {
        let mut tape = Tape::<f64>::new();
        let data = vec![1.0, -2.0, 3.0, 0.5];
        let x = tape.leaf(Tensor::new([4], data.clone()).unwrap(), true);
        let sq = tape.hadamard(x, x).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        let want: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.grad(x).unwrap(), want.as_slice());
    }

    #[test]
    fn double_backward_is_state_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones([3]), true);
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(TensorError::State(_))));
        tape.zero_grad();
        tape.backward(loss).unwrap();
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones([3]), true);
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(TensorError::State(_))));
    }

    #[test]
    fn constants_receive_no_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones([3]), true);
        let c = tape.constant(Tensor::full([3], 2.0));
        let p = tape.hadamard(x, c).unwrap();
        let loss = tape.sum_all(p);
        tape.backward(loss).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[2.0; 3]);
    }
}
