//! Central finite-difference checks of tape gradients in `f64`.
//!
//! The numeric side only ever evaluates the forward pass, so it stays
//! independent of the backward rules it checks.

use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::SeedableRng;

use crate::error::Result;
use crate::ops::{BatchNormState, Conv2dSpec, Mode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
/// Tolerance for single ops.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for composed end-to-end checks.
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Magnitude below which errors are measured absolutely.
pub const ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub points: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares `backward` against central differences of `loss_fn` for up to
/// `points` coordinates per input (all coordinates if fewer).
pub fn check<F>(name: &str, inputs: &[Tensor<f64>], points: usize, seed: u64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut rng = StdRng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        name: name.to_string(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        points: 0,
    };
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if input.numel() <= points {
            (0..input.numel()).collect()
        } else {
            sample(&mut rng, input.numel(), points).into_vec()
        };
        for c in coords {
            let orig = input.data()[c];
            work[i].data_mut()[c] = orig + STEP;
            let plus = eval(&work)?;
            work[i].data_mut()[c] = orig - STEP;
            let minus = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[i][c];
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.points += 1;
        }
    }
    Ok(report)
}

/// `sum(weights ⊙ y)`; random weights keep the check from collapsing onto
/// symmetric directions.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = tape.constant(Tensor::uniform(tape.shape(y).to_vec(), -1.0, 1.0, &mut rng));
    let p = tape.hadamard(y, w)?;
    Ok(tape.sum_all(p))
}

/// Values bounded away from zero so kinks (ReLU) stay outside the stencil.
fn away_from_zero(shape: &[usize], rng: &mut StdRng) -> Tensor<f64> {
    let mut t = Tensor::<f64>::uniform(shape.to_vec(), 0.1, 2.0, rng);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        if i % 2 == 1 {
            *v = -*v;
        }
    }
    t
}

/// Gradient checks for every differentiable op on the tape.
pub fn op_suite(seed: u64, points: usize) -> Result<Vec<GradCheckReport>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let mut randn = |shape: &[usize]| Tensor::<f64>::randn(shape.to_vec(), &mut rng);

    let conv_in = [randn(&[2, 2, 5, 5]), randn(&[3, 2, 3, 3]), randn(&[3])];
    reports.push(check("conv2d", &conv_in, points, seed, |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], Conv2dSpec::new((2, 1), (1, 1)))?;
        weighted_sum(t, y, seed)
    })?);

    let conv_in = [randn(&[2, 4, 3, 1]), randn(&[5, 4, 1, 1]), randn(&[5])];
    reports.push(check("conv2d_1x1", &conv_in, points, seed, |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], Conv2dSpec::unit())?;
        weighted_sum(t, y, seed)
    })?);

    reports.push(check("maxpool2d", &[randn(&[1, 2, 6, 6])], points, seed, |t, v| {
        let y = t.maxpool2d(v[0], (2, 3), (2, 2))?;
        weighted_sum(t, y, seed)
    })?);

    let bn_in = [randn(&[4, 3, 2, 2]), randn(&[3]), randn(&[3])];
    reports.push(check("batch_norm_train", &bn_in, points, seed, |t, v| {
        let mut st = BatchNormState::new(3);
        let y = t.batch_norm(v[0], v[1], v[2], &mut st, Mode::Train)?;
        weighted_sum(t, y, seed)
    })?);

    let bn_in = [randn(&[5, 4]), randn(&[4]), randn(&[4])];
    reports.push(check("batch_norm_train_1d", &bn_in, points, seed, |t, v| {
        let mut st = BatchNormState::new(4);
        let y = t.batch_norm(v[0], v[1], v[2], &mut st, Mode::Train)?;
        weighted_sum(t, y, seed)
    })?);

    let bn_in = [randn(&[3, 2, 2, 2]), randn(&[2]), randn(&[2])];
    reports.push(check("batch_norm_eval", &bn_in, points, seed, |t, v| {
        let mut st = BatchNormState::new(2);
        st.running_mean = vec![0.3, -0.7];
        st.running_var = vec![1.7, 0.4];
        let y = t.batch_norm(v[0], v[1], v[2], &mut st, Mode::Eval)?;
        weighted_sum(t, y, seed)
    })?);

    let mut act_rng = StdRng::seed_from_u64(seed + 1);
    let act_in = [away_from_zero(&[4, 6], &mut act_rng)];
    for (name, kind) in [
        ("elu", crate::Activation::Elu),
        ("relu", crate::Activation::Relu),
        ("sigmoid", crate::Activation::Sigmoid),
    ] {
        reports.push(check(name, &act_in, points, seed, |t, v| {
            let y = t.activation(v[0], kind);
            weighted_sum(t, y, seed)
        })?);
    }

    let red_in = [randn(&[2, 3, 4])];
    for axis in 0..3 {
        reports.push(check(&format!("reduce_sum_axis{axis}"), &red_in, points, seed, |t, v| {
            let y = t.reduce_sum(v[0], axis, axis == 1)?;
            weighted_sum(t, y, seed)
        })?);
    }

    let had_in = [randn(&[2, 3, 4, 1]), randn(&[2, 3, 4, 1])];
    reports.push(check("hadamard", &had_in, points, seed, |t, v| {
        let y = t.hadamard(v[0], v[1])?;
        weighted_sum(t, y, seed)
    })?);

    let had_in = [randn(&[2, 3, 4, 1]), randn(&[2, 1, 4, 1])];
    reports.push(check("hadamard_broadcast", &had_in, points, seed, |t, v| {
        let y = t.hadamard(v[0], v[1])?;
        weighted_sum(t, y, seed)
    })?);

    let lin_in = [randn(&[3, 4]), randn(&[5, 4]), randn(&[5])];
    reports.push(check("linear", &lin_in, points, seed, |t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        weighted_sum(t, y, seed)
    })?);

    reports.push(check("dropout", &[randn(&[4, 5])], points, seed, |t, v| {
        let mut mask_rng = StdRng::seed_from_u64(seed + 2);
        let y = t.dropout(v[0], 0.3, Mode::Train, &mut mask_rng)?;
        weighted_sum(t, y, seed)
    })?);

    reports.push(check("softmax_cross_entropy", &[randn(&[4, 5])], points, seed, |t, v| {
        t.softmax_cross_entropy(v[0], &[0, 3, 4, 1])
    })?);

    let mut pos_rng = StdRng::seed_from_u64(seed + 3);
    let pos_in = [Tensor::uniform([2, 3, 5, 1], 0.05, 1.0, &mut pos_rng)];
    reports.push(check("normalize_sum", &pos_in, points, seed, |t, v| {
        let y = t.normalize_sum(v[0], 2, 1e-8)?;
        weighted_sum(t, y, seed)
    })?);

    reports.push(check("scale_reshape", &[randn(&[4, 6])], points, seed, |t, v| {
        let s = t.scale(v[0], -1.7);
        let y = t.reshape(s, [3, 8])?;
        weighted_sum(t, y, seed)
    })?);

    Ok(reports)
}
