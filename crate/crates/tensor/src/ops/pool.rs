use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    /// Max pooling over `B x C x H x W`. Gradients flow to the first maximal
    /// element of each window in row-major order.
    pub fn maxpool2d(&mut self, input: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        const OP: &str = "maxpool2d";
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::dim(OP, "input rank", format!("expected 4, got shape {xs:?}")));
        }
        let (kh, kw) = kernel;
        let (sh, sw) = stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(TensorError::invalid(OP, "kernel and stride must be positive"));
        }
        if xs[2] < kh {
            return Err(TensorError::dim(OP, "height", format!("kernel {kh} larger than input {}", xs[2])));
        }
        if xs[3] < kw {
            return Err(TensorError::dim(OP, "width", format!("kernel {kw} larger than input {}", xs[3])));
        }
        let (h, w) = (xs[2], xs[3]);
        let out_h = (h - kh) / sh + 1;
        let out_w = (w - kw) / sw + 1;
        let planes = xs[0] * xs[1];
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(planes * out_h * out_w);
        let mut argmax = Vec::with_capacity(planes * out_h * out_w);
        for plane in 0..planes {
            let base = plane * h * w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = base + oy * sh * w + ox * sw;
                    for i in 0..kh {
                        for j in 0..kw {
                            let idx = base + (oy * sh + i) * w + ox * sw + j;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new([xs[0], xs[1], out_h, out_w], out)?;
        Ok(self.push(value, Op::MaxPool2d { input, argmax }))
    }
}
