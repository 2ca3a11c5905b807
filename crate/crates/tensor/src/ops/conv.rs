use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dSpec {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self { stride, padding }
    }

    /// Stride 1, no padding.
    pub fn unit() -> Self {
        Self::new((1, 1), (0, 0))
    }

    /// Output extent along one axis, or `None` if the kernel does not fit.
    pub fn output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        let padded = input + 2 * padding;
        if stride == 0 || kernel == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvGeometry {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    fn in_sample(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    fn out_sample(&self) -> usize {
        self.out_c * self.col_cols()
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.sh + i) as isize - g.ph as isize;
                    let seg = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.sw + j) as isize - g.pw as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(col: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.sh + i) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.sw + j) as isize - g.pw as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
}

pub(crate) fn backward<T: Real>(
    g: &ConvGeometry,
    x: &[T],
    w: &[T],
    dout: &[T],
    want_input: bool,
    want_weight: bool,
) -> ConvGrads<T> {
    let (k, p) = (g.col_rows(), g.col_cols());
    let mut dx = want_input.then(|| vec![T::zero(); x.len()]);
    let mut dw = want_weight.then(|| vec![T::zero(); w.len()]);
    let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let mut dcol = if g.pointwise() || !want_input {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for b in 0..g.batch {
        let xb = &x[b * g.in_sample()..(b + 1) * g.in_sample()];
        let gb = &dout[b * g.out_sample()..(b + 1) * g.out_sample()];
        if let Some(dw) = dw.as_mut() {
            let cols: &[T] = if g.pointwise() {
                xb
            } else {
                im2col(xb, g, &mut col);
                &col
            };
            T::gemm(g.out_c, p, k, T::one(), gb, false, cols, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * g.in_sample()..(b + 1) * g.in_sample()];
            if g.pointwise() {
                T::gemm(k, g.out_c, p, T::one(), w, true, gb, false, T::zero(), dxb);
            } else {
                T::gemm(k, g.out_c, p, T::one(), w, true, gb, false, T::zero(), &mut dcol);
                col2im_add(&dcol, g, dxb);
            }
        }
    }
    ConvGrads { input: dx, weight: dw }
}

pub(crate) fn bias_grad<T: Real>(g: &ConvGeometry, dout: &[T]) -> Vec<T> {
    let p = g.col_cols();
    let mut db = vec![T::zero(); g.out_c];
    for sample in dout.chunks_exact(g.out_sample()) {
        for (c, plane) in sample.chunks_exact(p).enumerate() {
            db[c] += plane.iter().copied().sum::<T>();
        }
    }
    db
}

impl<T: Real> Tape<T> {
    /// 2-D cross-correlation of `B x Cin x H x W` input with a
    /// `Cout x Cin x Kh x Kw` kernel plus per-output-channel bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: Conv2dSpec) -> Result<Var> {
        const OP: &str = "conv2d";
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 4 {
            return Err(TensorError::dim(OP, "input rank", format!("expected 4, got shape {xs:?}")));
        }
        if ws.len() != 4 {
            return Err(TensorError::dim(OP, "weight rank", format!("expected 4, got shape {ws:?}")));
        }
        if ws[1] != xs[1] {
            return Err(TensorError::dim(
                OP,
                "in_channels",
                format!("input has {} channels, weight expects {}", xs[1], ws[1]),
            ));
        }
        if bs != [ws[0]] {
            return Err(TensorError::dim(
                OP,
                "bias",
                format!("bias shape {bs:?} does not match {} output channels", ws[0]),
            ));
        }
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.padding;
        let out_h = Conv2dSpec::output_len(xs[2], ws[2], sh, ph).ok_or_else(|| {
            TensorError::dim(OP, "height", format!("kernel {} does not fit input {} (pad {ph}, stride {sh})", ws[2], xs[2]))
        })?;
        let out_w = Conv2dSpec::output_len(xs[3], ws[3], sw, pw).ok_or_else(|| {
            TensorError::dim(OP, "width", format!("kernel {} does not fit input {} (pad {pw}, stride {sw})", ws[3], xs[3]))
        })?;
        let geom = ConvGeometry {
            batch: xs[0],
            in_c: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_c: ws[0],
            kh: ws[2],
            kw: ws[3],
            sh,
            sw,
            ph,
            pw,
            out_h,
            out_w,
        };

        let (k, p) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![T::zero(); geom.batch * geom.out_sample()];
        {
            let x = self.value(input).data();
            let w = self.value(weight).data();
            let bias_v = self.value(bias).data();
            let mut col = if geom.pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
            for b in 0..geom.batch {
                let xb = &x[b * geom.in_sample()..(b + 1) * geom.in_sample()];
                let ob = &mut out[b * geom.out_sample()..(b + 1) * geom.out_sample()];
                for (plane, &bv) in ob.chunks_exact_mut(p).zip(bias_v) {
                    plane.fill(bv);
                }
                let cols: &[T] = if geom.pointwise() {
                    xb
                } else {
                    im2col(xb, &geom, &mut col);
                    &col
                };
                T::gemm(geom.out_c, k, p, T::one(), w, false, cols, false, T::one(), ob);
            }
        }
        let value = Tensor::new([geom.batch, geom.out_c, out_h, out_w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_window() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([1, 1, 3, 3]));
        let w = tape.constant(Tensor::ones([1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros([1]));
        let y = tape.conv2d(x, w, b, Conv2dSpec::unit()).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);
    }

    #[test]
    fn same_padding_keeps_extent() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([2, 3, 7, 5]));
        let w = tape.constant(Tensor::ones([4, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros([4]));
        let y = tape.conv2d(x, w, b, Conv2dSpec::new((1, 1), (1, 1))).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 7, 5]);
        // corner sees a 2x2 patch in each of 3 channels
        assert_eq!(tape.value(y).data()[0], 12.0);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([1, 2, 4, 4]));
        let w = tape.constant(Tensor::ones([1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros([1]));
        match tape.conv2d(x, w, b, Conv2dSpec::unit()) {
            Err(TensorError::Dimension { axis, .. }) => assert_eq!(axis, "in_channels"),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([1, 1, 2, 2]));
        let w = tape.constant(Tensor::ones([1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros([1]));
        assert!(tape.conv2d(x, w, b, Conv2dSpec::unit()).is_err());
    }
}
