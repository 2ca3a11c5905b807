//! Convolutional embedding, per-channel temporal attention pooling, and the
//! classification head.

use std::fmt;
use std::str::FromStr;

use mcta_tensor::{lit, BatchNormState, Conv2dSpec, Mode, Parameter, Real, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// log-mel, delta, delta-delta
pub const INPUT_CHANNELS: usize = 3;
pub const EMBED_CONVS: usize = 5;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionMode {
    /// One temporal weight vector per embedded channel.
    #[serde(rename = "mcta")]
    Mcta,
    /// One weight vector shared by all channels (channel mean of the map).
    #[serde(rename = "single")]
    SingleChannel,
    /// Plain temporal sum.
    #[serde(rename = "none")]
    NoAttention,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 3] = [AttentionMode::Mcta, AttentionMode::SingleChannel, AttentionMode::NoAttention];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::Mcta => "mcta",
            AttentionMode::SingleChannel => "single",
            AttentionMode::NoAttention => "none",
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mcta" | "multi" | "multi_channel" => Ok(AttentionMode::Mcta),
            "single" | "single_channel" => Ok(AttentionMode::SingleChannel),
            "none" | "no_attention" => Ok(AttentionMode::NoAttention),
            other => Err(Error::Validation(format!(
                "unknown attention mode {other:?} (expected mcta, single or none)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub block1_filters: usize,
    pub block2_filters: usize,
    /// Odd kernel, applied with same padding.
    pub conv_kernel: (usize, usize),
    /// (time, frequency) kernel and stride of the first pool.
    pub pool1: (usize, usize),
    pub pool2: (usize, usize),
    /// Valid-padded final conv producing `hidden_channels` maps.
    pub final_kernel: (usize, usize),
    pub final_stride: (usize, usize),
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            block1_filters: 48,
            block2_filters: 96,
            conv_kernel: (3, 3),
            pool1: (2, 8),
            pool2: (2, 4),
            final_kernel: (5, 4),
            final_stride: (2, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_channels: usize,
    pub attention_mode: AttentionMode,
    /// The attention map and the linear branch use one 1x1 conv.
    pub shared_attention_conv: bool,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub mel_bins: usize,
    pub embedding: EmbeddingConfig,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    /// Added to the attention normaliser.
    pub norm_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 512,
            attention_mode: AttentionMode::Mcta,
            shared_attention_conv: true,
            dropout_rate: 0.3,
            num_classes: 50,
            mel_bins: 128,
            embedding: EmbeddingConfig::default(),
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
            norm_epsilon: 1e-8,
        }
    }
}

impl ModelConfig {
    /// Narrow embedding with the full-width attention block, for
    /// single-core experiments on the synthetic set.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            num_classes,
            embedding: EmbeddingConfig {
                block1_filters: 4,
                block2_filters: 8,
                ..EmbeddingConfig::default()
            },
            ..Self::default()
        }
    }

    /// Tiny network on 16 mel bins, used for end-to-end gradient checks.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            hidden_channels: 8,
            num_classes,
            mel_bins: 16,
            embedding: EmbeddingConfig {
                block1_filters: 3,
                block2_filters: 4,
                conv_kernel: (3, 3),
                pool1: (2, 2),
                pool2: (2, 2),
                final_kernel: (2, 4),
                final_stride: (1, 1),
            },
            ..Self::default()
        }
    }

    pub fn with_mode(mut self, mode: AttentionMode) -> Self {
        self.attention_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.embedding;
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.hidden_channels == 0 || e.block1_filters == 0 || e.block2_filters == 0 {
            return bad("channel counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if e.conv_kernel.0 % 2 == 0 || e.conv_kernel.1 % 2 == 0 {
            return bad(format!("same-padded kernel must be odd, got {:?}", e.conv_kernel));
        }
        for (name, k) in [("pool1", e.pool1), ("pool2", e.pool2), ("final_kernel", e.final_kernel), ("final_stride", e.final_stride)] {
            if k.0 == 0 || k.1 == 0 {
                return bad(format!("{name} must be positive, got {k:?}"));
            }
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return bad(format!("batch-norm momentum must be in (0, 1), got {}", self.bn_momentum));
        }
        if !(self.bn_epsilon > 0.0) || !(self.norm_epsilon >= 0.0) {
            return bad("epsilons must be positive".into());
        }
        match self.embedded_bins() {
            Some(1) => Ok(()),
            other => bad(format!(
                "embedding must collapse {} mel bins to 1, gets {:?}",
                self.mel_bins, other
            )),
        }
    }

    fn embedded_len(&self, len: usize, axis: usize) -> Option<usize> {
        let e = &self.embedding;
        let pick = |p: (usize, usize)| if axis == 0 { p.0 } else { p.1 };
        let a = Conv2dSpec::output_len(len, pick(e.pool1), pick(e.pool1), 0)?;
        let b = Conv2dSpec::output_len(a, pick(e.pool2), pick(e.pool2), 0)?;
        Conv2dSpec::output_len(b, pick(e.final_kernel), pick(e.final_stride), 0)
    }

    fn embedded_bins(&self) -> Option<usize> {
        self.embedded_len(self.mel_bins, 1)
    }

    /// Time length after the embedding, or `None` if `frames` is too short.
    pub fn embedded_frames(&self, frames: usize) -> Option<usize> {
        self.embedded_len(frames, 0)
    }

    /// Smallest input length the embedding accepts.
    pub fn min_frames(&self) -> usize {
        (1..).find(|&t| self.embedded_frames(t).is_some()).unwrap()
    }
}

/// Name and shape of every learnable tensor, in storage order.
pub fn param_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let e = &config.embedding;
    let (kh, kw) = e.conv_kernel;
    let c = config.hidden_channels;
    let mut out = Vec::new();
    let chans = [
        (INPUT_CHANNELS, e.block1_filters, (kh, kw)),
        (e.block1_filters, e.block1_filters, (kh, kw)),
        (e.block1_filters, e.block2_filters, (kh, kw)),
        (e.block2_filters, e.block2_filters, (kh, kw)),
        (e.block2_filters, c, e.final_kernel),
    ];
    for (i, (cin, cout, (a, b))) in chans.into_iter().enumerate() {
        let n = i + 1;
        out.push((format!("embed.conv{n}.weight"), vec![cout, cin, a, b]));
        out.push((format!("embed.conv{n}.bias"), vec![cout]));
        out.push((format!("embed.bn{n}.gamma"), vec![cout]));
        out.push((format!("embed.bn{n}.beta"), vec![cout]));
    }
    out.push(("attention.conv.weight".into(), vec![c, c, 1, 1]));
    out.push(("attention.conv.bias".into(), vec![c]));
    if !config.shared_attention_conv {
        out.push(("attention.linear_conv.weight".into(), vec![c, c, 1, 1]));
        out.push(("attention.linear_conv.bias".into(), vec![c]));
    }
    out.push(("attention.bn.gamma".into(), vec![c]));
    out.push(("attention.bn.beta".into(), vec![c]));
    out.push(("classifier.weight".into(), vec![config.num_classes, c]));
    out.push(("classifier.bias".into(), vec![config.num_classes]));
    out
}

/// Number of learnable scalars.
pub fn param_count(config: &ModelConfig) -> usize {
    param_shapes(config).iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}

/// Per-layer parameter counts (weights, biases and affine pairs grouped).
pub fn param_table(config: &ModelConfig) -> Vec<(String, usize)> {
    let mut rows: Vec<(String, usize)> = Vec::new();
    for (name, shape) in param_shapes(config) {
        let layer = name.rsplit_once('.').map(|(l, _)| l.to_string()).unwrap_or(name);
        let n: usize = shape.iter().product();
        match rows.last_mut() {
            Some((l, total)) if *l == layer => *total += n,
            _ => rows.push((layer, n)),
        }
    }
    rows
}

#[derive(Clone, Debug)]
struct Layout {
    /// (weight, bias, gamma, beta) for each embedding conv.
    convs: Vec<[usize; 4]>,
    att_w: usize,
    att_b: usize,
    lin_w: usize,
    lin_b: usize,
    head_gamma: usize,
    head_beta: usize,
    fc_w: usize,
    fc_b: usize,
}

impl Layout {
    fn new(config: &ModelConfig) -> Self {
        let convs = (0..EMBED_CONVS).map(|i| [4 * i, 4 * i + 1, 4 * i + 2, 4 * i + 3]).collect();
        let att_w = 4 * EMBED_CONVS;
        let att_b = att_w + 1;
        let (lin_w, lin_b, next) = if config.shared_attention_conv {
            (att_w, att_b, att_b + 1)
        } else {
            (att_b + 1, att_b + 2, att_b + 3)
        };
        Self {
            convs,
            att_w,
            att_b,
            lin_w,
            lin_b,
            head_gamma: next,
            head_beta: next + 1,
            fc_w: next + 2,
            fc_b: next + 3,
        }
    }
}

/// Intermediate tensors of the attention block (batch axis first).
#[derive(Copy, Clone, Debug)]
pub struct AttentionVars {
    /// `B x C' x T' x 1` (MCTA, NoAttention) or `B x 1 x T' x 1` (single).
    pub weights: Var,
    /// Linear branch `B x C' x T' x 1`.
    pub linear: Var,
    /// `linear ⊙ weights`.
    pub attended: Var,
    /// Temporal sum of `attended`, `B x C'`.
    pub hidden_raw: Var,
    /// After batch norm and ReLU.
    pub hidden: Var,
}

/// Network parameters plus batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct MctaModel<T> {
    pub config: ModelConfig,
    pub params: Vec<Parameter<T>>,
    /// Five embedding layers followed by the head.
    pub bn: Vec<BatchNormState<T>>,
    layout: Layout,
}

impl<T: Real> MctaModel<T> {
    /// He-uniform for the embedding convs, `±1/sqrt(fan_in)` for the 1x1
    /// attention convs and the classifier; zero biases, unit BN scales.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = param_shapes(&config)
            .into_iter()
            .map(|(name, shape)| {
                let value = if name.ends_with(".weight") {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = if name.starts_with("embed.") {
                        (6.0 / fan_in as f64).sqrt()
                    } else {
                        1.0 / (fan_in as f64).sqrt()
                    };
                    Tensor::uniform(shape, -bound, bound, rng)
                } else if name.ends_with(".gamma") {
                    Tensor::ones(shape)
                } else {
                    Tensor::zeros(shape)
                };
                Parameter::new(name, value)
            })
            .collect();
        Self::from_params(config, params)
    }

    /// Assembles a model from stored tensors; names and shapes must match.
    pub fn from_params(config: ModelConfig, params: Vec<Parameter<T>>) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::Validation(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        let e = &config.embedding;
        let widths = [
            e.block1_filters,
            e.block1_filters,
            e.block2_filters,
            e.block2_filters,
            config.hidden_channels,
            config.hidden_channels,
        ];
        let bn = widths
            .iter()
            .map(|&c| BatchNormState::with_hyper(c, lit(config.bn_momentum), lit(config.bn_epsilon)))
            .collect();
        Ok(Self {
            layout: Layout::new(&config),
            config,
            params,
            bn,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    /// Same parameters and statistics in another float type.
    pub fn cast<U: Real>(&self) -> MctaModel<U> {
        MctaModel {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast()))
                .collect(),
            bn: self
                .bn
                .iter()
                .map(|s| BatchNormState {
                    running_mean: s.running_mean.iter().map(|&v| lit(v.to_f64().unwrap())).collect(),
                    running_var: s.running_var.iter().map(|&v| lit(v.to_f64().unwrap())).collect(),
                    momentum: lit(s.momentum.to_f64().unwrap()),
                    epsilon: lit(s.epsilon.to_f64().unwrap()),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Places every parameter on the tape; the returned vars follow
    /// `self.params` order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p)).collect()
    }

    /// Copies gradients from the tape into the parameters. Parameters the
    /// loss does not reach (the unused branch conv in some modes) get zeros.
    pub fn collect_grads(&mut self, tape: &mut Tape<T>, vars: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            p.grad = Some(tape.take_grad(v).unwrap_or_else(|| vec![T::zero(); p.numel()]));
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != INPUT_CHANNELS || shape[3] != self.config.mel_bins {
            return Err(Error::InvalidInput(format!(
                "expected input B x {INPUT_CHANNELS} x T x {}, got {shape:?}",
                self.config.mel_bins
            )));
        }
        if self.config.embedded_frames(shape[2]).is_none() {
            return Err(Error::InvalidInput(format!(
                "{} frames is too short for the embedding (needs at least {})",
                shape[2],
                self.config.min_frames()
            )));
        }
        Ok(())
    }

    /// `B x 3 x T x F` to `B x C' x T' x 1`.
    pub fn embed(&mut self, tape: &mut Tape<T>, vars: &[Var], x: Var, mode: Mode) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        let e = self.config.embedding.clone();
        let same = Conv2dSpec::new((1, 1), (e.conv_kernel.0 / 2, e.conv_kernel.1 / 2));
        let mut h = x;
        for i in 0..EMBED_CONVS {
            let [w, b, g, be] = self.layout.convs[i];
            let spec = if i + 1 == EMBED_CONVS {
                Conv2dSpec::new(e.final_stride, (0, 0))
            } else {
                same
            };
            h = tape.conv2d(h, vars[w], vars[b], spec)?;
            h = tape.batch_norm(h, vars[g], vars[be], &mut self.bn[i], mode)?;
            h = tape.elu(h);
            if i == 1 {
                h = tape.maxpool2d(h, e.pool1, e.pool1)?;
            } else if i == 3 {
                h = tape.maxpool2d(h, e.pool2, e.pool2)?;
            }
        }
        Ok(h)
    }

    /// Temporal weights for `B x C' x T' x 1` embedded features.
    pub fn attention_weights(&self, tape: &mut Tape<T>, vars: &[Var], xp: Var) -> Result<Var> {
        let eps = lit(self.config.norm_epsilon);
        match self.config.attention_mode {
            AttentionMode::Mcta => {
                let s = tape.conv2d(xp, vars[self.layout.att_w], vars[self.layout.att_b], Conv2dSpec::unit())?;
                let s = tape.sigmoid(s);
                Ok(tape.normalize_sum(s, 2, eps)?)
            }
            AttentionMode::SingleChannel => {
                let s = tape.conv2d(xp, vars[self.layout.att_w], vars[self.layout.att_b], Conv2dSpec::unit())?;
                let s = tape.sigmoid(s);
                let m = tape.reduce_mean(s, 1, true)?;
                Ok(tape.normalize_sum(m, 2, eps)?)
            }
            AttentionMode::NoAttention => Ok(tape.constant(Tensor::ones(tape.shape(xp).to_vec()))),
        }
    }

    /// Attention pooling of embedded features into the hidden vector.
    pub fn attend(&mut self, tape: &mut Tape<T>, vars: &[Var], xp: Var, mode: Mode) -> Result<AttentionVars> {
        let shape = tape.shape(xp).to_vec();
        if shape.len() != 4 || shape[1] != self.config.hidden_channels || shape[3] != 1 {
            return Err(Error::InvalidInput(format!(
                "expected embedded features B x {} x T' x 1, got {shape:?}",
                self.config.hidden_channels
            )));
        }
        let weights = self.attention_weights(tape, vars, xp)?;
        let linear = tape.conv2d(xp, vars[self.layout.lin_w], vars[self.layout.lin_b], Conv2dSpec::unit())?;
        let attended = match self.config.attention_mode {
            AttentionMode::NoAttention => linear,
            _ => tape.hadamard(linear, weights)?,
        };
        let summed = tape.reduce_sum(attended, 2, false)?;
        let hidden_raw = tape.reshape(summed, vec![shape[0], shape[1]])?;
        let head = self.bn.len() - 1;
        let normed = tape.batch_norm(
            hidden_raw,
            vars[self.layout.head_gamma],
            vars[self.layout.head_beta],
            &mut self.bn[head],
            mode,
        )?;
        let hidden = tape.relu(normed);
        Ok(AttentionVars {
            weights,
            linear,
            attended,
            hidden_raw,
            hidden,
        })
    }

    /// Dropout and the dense layer on top of the hidden vector.
    pub fn classify<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        hidden: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let d = tape.dropout(hidden, self.config.dropout_rate, mode, rng)?;
        Ok(tape.linear(d, vars[self.layout.fc_w], vars[self.layout.fc_b])?)
    }

    /// Raw logits `B x K`.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        Ok(self.forward_detailed(tape, vars, x, mode, rng)?.0)
    }

    /// Logits together with the embedded features and attention tensors.
    pub fn forward_detailed<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Var, AttentionVars)> {
        let xp = self.embed(tape, vars, x, mode)?;
        let att = self.attend(tape, vars, xp, mode)?;
        let logits = self.classify(tape, vars, att.hidden, mode, rng)?;
        Ok((logits, xp, att))
    }

    /// Evaluation-mode attention weights as `B x C' x T'`; a shared vector is
    /// repeated across channels and NoAttention yields ones.
    pub fn attention_map(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.constant(x);
        let xp = self.embed(&mut tape, &vars, xv, Mode::Eval)?;
        let w = self.attention_weights(&mut tape, &vars, xp)?;
        let (b, c, t) = {
            let s = tape.shape(xp);
            (s[0], s[1], s[2])
        };
        let wv = tape.value(w);
        let wc = wv.shape()[1];
        let mut out = Vec::with_capacity(b * c * t);
        for bi in 0..b {
            for ci in 0..c {
                let src = bi * wc * t + (ci % wc) * t;
                out.extend_from_slice(&wv.data()[src..src + t]);
            }
        }
        Ok(Tensor::new([b, c, t], out)?)
    }

    /// Evaluation-mode logits for a batch, without keeping the tape.
    pub fn predict(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.constant(x);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let logits = self.forward(&mut tape, &vars, xv, Mode::Eval, &mut rng)?;
        Ok(tape.value(logits).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_shape_algebra() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.embedded_frames(431), Some(52));
        assert_eq!(c.embedded_frames(938), Some(115));
        assert_eq!(c.min_frames(), 20);
        assert_eq!(c.embedded_frames(19), None);
        assert_eq!(c.embedded_frames(20), Some(1));
    }

    #[test]
    fn shorter_input_shortens_output() {
        let c = ModelConfig::default();
        for t in 28..600 {
            assert!(c.embedded_frames(t - 8).unwrap() < c.embedded_frames(t).unwrap());
        }
    }

    #[test]
    fn default_parameter_budget() {
        let c = ModelConfig::default();
        assert_eq!(param_count(&c), 1_421_218);
        let table = param_table(&c);
        assert_eq!(table.last().unwrap(), &("classifier".to_string(), 25_650));
        assert_eq!(table.iter().map(|(_, n)| n).sum::<usize>(), 1_421_218);
        let separate = ModelConfig {
            shared_attention_conv: false,
            ..c.clone()
        };
        assert_eq!(param_count(&separate), 1_421_218 + 512 * 512 + 512);
        for mode in AttentionMode::ALL {
            assert_eq!(param_count(&c.clone().with_mode(mode)), 1_421_218);
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in AttentionMode::ALL {
            assert_eq!(m.as_str().parse::<AttentionMode>().unwrap(), m);
        }
        assert!("spectral".parse::<AttentionMode>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::desk(8).validate().is_ok());
        assert!(ModelConfig::toy(3).validate().is_ok());
        let mut c = ModelConfig::default();
        c.num_classes = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.mel_bins = 64;
        assert!(c.validate().unwrap_err().to_string().contains("collapse"));
    }

    #[test]
    fn short_input_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = MctaModel::<f32>::new(ModelConfig::toy(3), &mut rng).unwrap();
        let min = m.config.min_frames();
        assert!(m.predict(Tensor::zeros([1, 3, min, 16])).is_ok());
        let err = m.predict(Tensor::zeros([1, 3, min - 1, 16])).unwrap_err();
        assert!(err.to_string().contains("too short"));
    }

    #[test]
    fn from_params_rejects_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = MctaModel::<f32>::new(ModelConfig::toy(3), &mut rng).unwrap();
        let mut params = m.params.clone();
        params.pop();
        assert!(MctaModel::from_params(m.config.clone(), params).is_err());
    }
}
