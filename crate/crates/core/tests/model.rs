use mcta_core::model::{param_count, AttentionMode, MctaModel, ModelConfig};
use mcta_tensor::gradcheck::{self, MODEL_TOLERANCE};
use mcta_tensor::{Mode, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Toy model (C' = 8) with random attention biases so the oracle sees every
/// term.
fn model(mode: AttentionMode, shared: bool, seed: u64) -> MctaModel<f64> {
    let cfg = ModelConfig {
        shared_attention_conv: shared,
        ..ModelConfig::toy(5).with_mode(mode)
    };
    let mut r = rng(seed);
    let mut m = MctaModel::<f64>::new(cfg, &mut r).unwrap();
    for p in m.params.iter_mut().filter(|p| p.name.starts_with("attention.") && p.name.ends_with(".bias")) {
        for v in p.value.data_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
    }
    m
}

fn param<'a>(m: &'a MctaModel<f64>, name: &str) -> &'a [f64] {
    m.params.iter().find(|p| p.name == name).unwrap().value.data()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar loops over `x[b][c][t]`: 1x1 conv, sigmoid, per-channel
/// normalisation over time, weighted temporal sum.
fn mcta_oracle(m: &MctaModel<f64>, x: &[f64], b: usize, c: usize, t: usize) -> (Vec<f64>, Vec<f64>) {
    let w = param(m, "attention.conv.weight");
    let bias = param(m, "attention.conv.bias");
    let eps = m.config.norm_epsilon;
    let at = |bi: usize, ci: usize, ti: usize| x[(bi * c + ci) * t + ti];
    let mut weights = vec![0.0; b * c * t];
    let mut hidden = vec![0.0; b * c];
    for bi in 0..b {
        for co in 0..c {
            let mut lin = vec![0.0; t];
            let mut s = vec![0.0; t];
            for ti in 0..t {
                let mut acc = bias[co];
                for ci in 0..c {
                    acc += w[co * c + ci] * at(bi, ci, ti);
                }
                lin[ti] = acc;
                s[ti] = sigmoid(acc);
            }
            let total: f64 = s.iter().sum::<f64>() + eps;
            for ti in 0..t {
                let a = s[ti] / total;
                weights[(bi * c + co) * t + ti] = a;
                hidden[bi * c + co] += lin[ti] * a;
            }
        }
    }
    (weights, hidden)
}

fn attend(m: &mut MctaModel<f64>, x: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let a = m.attend(&mut tape, &vars, xv, Mode::Eval).unwrap();
    (
        tape.value(a.weights).clone(),
        tape.value(a.linear).clone(),
        tape.value(a.hidden_raw).clone(),
        tape.value(a.hidden).clone(),
    )
}

#[test]
fn mcta_block_matches_loop_oracle() {
    for seed in 0..5 {
        let mut m = model(AttentionMode::Mcta, true, seed);
        let x = Tensor::<f64>::randn([2, 8, 5, 1], &mut rng(100 + seed));
        let (w, _, h, out) = attend(&mut m, &x);
        let (ow, oh) = mcta_oracle(&m, x.data(), 2, 8, 5);
        for (a, b) in w.data().iter().zip(&ow) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in h.data().iter().zip(&oh) {
            assert!((a - b).abs() < 1e-6);
        }
        // eval-mode BN with fresh statistics, then ReLU
        let eps = m.config.bn_epsilon;
        for (i, (a, hv)) in out.data().iter().zip(&oh).enumerate() {
            let c = i % 8;
            let g = param(&m, "attention.bn.gamma")[c];
            let be = param(&m, "attention.bn.beta")[c];
            let want = (g * hv / (1.0 + eps).sqrt() + be).max(0.0);
            assert!((a - want).abs() < 1e-6);
        }
    }
}

#[test]
fn single_channel_matches_loop_oracle() {
    let cfg = ModelConfig {
        hidden_channels: 4,
        ..ModelConfig::toy(3).with_mode(AttentionMode::SingleChannel)
    };
    let mut r = rng(7);
    let mut m = MctaModel::<f64>::new(cfg, &mut r).unwrap();
    let x = Tensor::<f64>::randn([1, 4, 6, 1], &mut r);
    let (w, lin, h, _) = attend(&mut m, &x);
    assert_eq!(w.shape(), &[1, 1, 6, 1]);

    let wt = param(&m, "attention.conv.weight");
    let bias = param(&m, "attention.conv.bias");
    let mut mean = vec![0.0; 6];
    for t in 0..6 {
        for co in 0..4 {
            let acc: f64 = bias[co] + (0..4).map(|ci| wt[co * 4 + ci] * x.data()[ci * 6 + t]).sum::<f64>();
            mean[t] += sigmoid(acc) / 4.0;
        }
    }
    let total: f64 = mean.iter().sum::<f64>() + m.config.norm_epsilon;
    for t in 0..6 {
        assert!((w.data()[t] - mean[t] / total).abs() < 1e-6);
    }
    for c in 0..4 {
        let want: f64 = (0..6).map(|t| lin.data()[c * 6 + t] * mean[t] / total).sum();
        assert!((h.data()[c] - want).abs() < 1e-6);
    }
}

#[test]
fn no_attention_is_exact_time_sum() {
    let mut m = model(AttentionMode::NoAttention, true, 3);
    let x = Tensor::<f64>::randn([3, 8, 7, 1], &mut rng(4));
    let (w, lin, h, _) = attend(&mut m, &x);
    assert!(w.data().iter().all(|&v| v == 1.0));
    for bc in 0..24 {
        let want: f64 = lin.data()[bc * 7..(bc + 1) * 7].iter().sum();
        assert_eq!(h.data()[bc], want);
    }
}

#[test]
fn zero_features_give_uniform_weights() {
    for mode in AttentionMode::ALL {
        let cfg = ModelConfig::toy(3).with_mode(mode);
        let mut m = MctaModel::<f64>::new(cfg, &mut rng(1)).unwrap();
        let x = Tensor::<f64>::zeros([1, 8, 4, 1]);
        let (w, lin, h, _) = attend(&mut m, &x);
        let expect = if mode == AttentionMode::NoAttention { 1.0 } else { 0.25 };
        assert!(w.data().iter().all(|&v| (v - expect).abs() < 1e-8), "{mode}");
        if mode != AttentionMode::NoAttention {
            for c in 0..8 {
                let mean: f64 = lin.data()[c * 4..(c + 1) * 4].iter().sum::<f64>() / 4.0;
                assert!((h.data()[c] - mean).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn weights_are_probabilities_per_channel() {
    let mut m = model(AttentionMode::Mcta, true, 9);
    for seed in 0..20 {
        let x = Tensor::<f64>::randn([2, 8, 9, 1], &mut rng(seed)).map(|v| v * 4.0);
        let (w, ..) = attend(&mut m, &x);
        for row in w.data().chunks_exact(9) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn time_permutation_leaves_hidden_unchanged() {
    let mut m = model(AttentionMode::Mcta, true, 11);
    let (c, t) = (8, 6);
    let x = Tensor::<f64>::randn([1, c, t, 1], &mut rng(12));
    let perm = [3, 0, 5, 1, 4, 2];
    let mut px = x.clone();
    for ci in 0..c {
        for (ti, &src) in perm.iter().enumerate() {
            px.data_mut()[ci * t + ti] = x.data()[ci * t + src];
        }
    }
    let (_, _, h, _) = attend(&mut m, &x);
    let (_, _, ph, _) = attend(&mut m, &px);
    assert!(h.max_abs_diff(&ph) < 1e-12);
}

#[test]
fn scaling_linear_branch_channel_scales_hidden() {
    let alpha = -2.5;
    let target = 3;
    for mode in AttentionMode::ALL {
        let mut m = model(mode, false, 13);
        let x = Tensor::<f64>::randn([2, 8, 5, 1], &mut rng(14));
        let (_, _, h, _) = attend(&mut m, &x);
        for p in m.params.iter_mut().filter(|p| p.name.starts_with("attention.linear_conv.")) {
            let per = p.value.numel() / 8;
            for v in &mut p.value.data_mut()[target * per..(target + 1) * per] {
                *v *= alpha;
            }
        }
        let (_, _, h2, _) = attend(&mut m, &x);
        for (i, (a, b)) in h.data().iter().zip(h2.data()).enumerate() {
            let want = if i % 8 == target { alpha * a } else { *a };
            assert!((b - want).abs() < 1e-10, "{mode} index {i}");
        }
    }
}

#[test]
fn default_model_shape_contract() {
    let mut m = MctaModel::<f32>::new(ModelConfig::default(), &mut rng(0)).unwrap();
    let x = Tensor::<f32>::randn([1, 3, 431, 128], &mut rng(1));
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let xv = tape.constant(x);
    let (logits, xp, att) = m.forward_detailed(&mut tape, &vars, xv, Mode::Eval, &mut rng(2)).unwrap();
    assert_eq!(tape.shape(xp), &[1, 512, 52, 1]);
    assert_eq!(tape.shape(att.hidden), &[1, 512]);
    assert_eq!(tape.shape(logits), &[1, 50]);
}

#[test]
fn evaluation_is_bitwise_repeatable() {
    let mut m = MctaModel::<f32>::new(ModelConfig::toy(4), &mut rng(0)).unwrap();
    let x = Tensor::<f32>::randn([2, 3, 16, 16], &mut rng(1));
    let a = m.predict(x.clone()).unwrap();
    let b = m.predict(x).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn modes_share_parameter_count() {
    for shared in [true, false] {
        let base = ModelConfig {
            shared_attention_conv: shared,
            ..ModelConfig::default()
        };
        let counts: Vec<usize> = AttentionMode::ALL.iter().map(|&m| param_count(&base.clone().with_mode(m))).collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
        let built = MctaModel::<f32>::new(ModelConfig::toy(3).with_mode(AttentionMode::NoAttention), &mut rng(0)).unwrap();
        assert_eq!(built.param_count(), param_count(&ModelConfig::toy(3)));
    }
}

/// Every parameter tensor and the input, through the whole network in
/// training mode (fixed dropout mask).
fn end_to_end_check(mode: AttentionMode, shared: bool) -> gradcheck::GradCheckReport {
    let m = model(mode, shared, 21);
    let x = Tensor::<f64>::randn([3, 3, 16, 16], &mut rng(22));
    let mut inputs: Vec<Tensor<f64>> = m.params.iter().map(|p| p.value.clone()).collect();
    inputs.push(x);
    let labels = [0usize, 3, 1];
    gradcheck::check(&format!("model_{mode}"), &inputs, 20, 5, |tape, vars| {
        let mut local = m.clone();
        let (params, xin) = vars.split_at(vars.len() - 1);
        let mut drop = rng(99);
        let logits = local
            .forward(tape, params, xin[0], Mode::Train, &mut drop)
            .expect("toy forward");
        tape.softmax_cross_entropy(logits, &labels)
    })
    .unwrap()
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for (mode, shared) in [
        (AttentionMode::Mcta, true),
        (AttentionMode::Mcta, false),
        (AttentionMode::SingleChannel, true),
        (AttentionMode::NoAttention, true),
    ] {
        let r = end_to_end_check(mode, shared);
        assert!(r.passes(MODEL_TOLERANCE), "{mode} shared={shared}: {r:?}");
    }
}
