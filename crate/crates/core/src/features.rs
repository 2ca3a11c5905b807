//! Log-mel spectrogram plus delta and delta-delta channels.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub delta_width: usize,
    /// Power floor before taking decibels.
    pub amin: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 512,
            n_mels: 128,
            delta_width: 9,
            amin: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.hop == 0 || self.n_mels == 0 {
            return Err(Error::Validation(format!(
                "features need n_fft >= 2, hop >= 1, n_mels >= 1 (got {}, {}, {})",
                self.n_fft, self.hop, self.n_mels
            )));
        }
        if self.delta_width < 3 || self.delta_width % 2 == 0 {
            return Err(Error::Validation(format!(
                "delta width must be odd and >= 3, got {}",
                self.delta_width
            )));
        }
        if !(self.amin > 0.0) {
            return Err(Error::Validation("amin must be positive".into()));
        }
        Ok(())
    }

    pub fn frames(&self, num_samples: usize) -> usize {
        dsp::frame_count(num_samples, self.hop)
    }
}

/// Network input: three `frames x n_mels` maps (log-mel in dB, delta,
/// delta-delta) stored channel-major as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureInput {
    pub source_id: String,
    pub frames: usize,
    pub mel_bins: usize,
    pub data: Vec<f32>,
}

impl FeatureInput {
    pub const CHANNELS: usize = 3;

    pub fn shape(&self) -> [usize; 3] {
        [Self::CHANNELS, self.frames, self.mel_bins]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.frames * self.mel_bins;
        &self.data[c * plane..(c + 1) * plane]
    }
}

/// Power spectrogram `|STFT|^2`, `frames x (n_fft/2 + 1)`.
pub fn stft_power(samples: &[f32], n_fft: usize, hop: usize) -> Result<Array2<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("stft of an empty signal".into()));
    }
    if n_fft < 2 || hop == 0 {
        return Err(Error::InvalidInput(format!("bad STFT geometry n_fft={n_fft} hop={hop}")));
    }
    let frames = dsp::stft(samples, n_fft, hop);
    let bins = n_fft / 2 + 1;
    let mut out = Array2::zeros((frames.len(), bins));
    for (mut row, frame) in out.axis_iter_mut(Axis(0)).zip(&frames) {
        for (o, c) in row.iter_mut().zip(frame) {
            *o = c.norm_sqr();
        }
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Slaney-scale triangular filters spanning `0 .. sample_rate / 2`, each
/// scaled to unit area (`2 / bandwidth`). Shape `n_mels x (n_fft/2 + 1)`.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize) -> Result<Array2<f64>> {
    if sample_rate == 0 {
        return Err(Error::InvalidInput("sample rate must be positive".into()));
    }
    let bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let fft_freqs: Vec<f64> = (0..bins).map(|k| k as f64 * nyquist / (bins - 1) as f64).collect();
    let (mel_lo, mel_hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        for (k, &f) in fft_freqs.iter().enumerate() {
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            fb[[m, k]] = rising.min(falling).max(0.0) * norm;
        }
    }
    Ok(fb)
}

/// `10 * log10(max(power · fbᵀ, amin))`.
pub fn log_mel(power: &Array2<f64>, fb: &Array2<f64>, amin: f64) -> Result<Array2<f64>> {
    if power.ncols() != fb.ncols() {
        return Err(Error::InvalidInput(format!(
            "spectrogram has {} bins, filterbank expects {}",
            power.ncols(),
            fb.ncols()
        )));
    }
    let mel = power.dot(&fb.t());
    Ok(mel.mapv(|v| 10.0 * v.max(amin).log10()))
}

/// Local least-squares slope over `width` frames along time (axis 0), with
/// edge frames replicated. `order = 2` applies the operator twice.
pub fn deltas(feature: &Array2<f64>, width: usize, order: usize) -> Result<Array2<f64>> {
    if width < 3 || width % 2 == 0 {
        return Err(Error::InvalidInput(format!("delta width must be odd and >= 3, got {width}")));
    }
    if feature.nrows() == 0 {
        return Err(Error::InvalidInput("delta of an empty feature".into()));
    }
    let mut cur = feature.clone();
    for _ in 0..order {
        cur = delta_once(&cur, width);
    }
    Ok(cur)
}

fn delta_once(x: &Array2<f64>, width: usize) -> Array2<f64> {
    let n = (width / 2) as isize;
    let t_len = x.nrows() as isize;
    let denom: f64 = 2.0 * (1..=n).map(|k| (k * k) as f64).sum::<f64>();
    let clamp = |t: isize| t.clamp(0, t_len - 1) as usize;
    let mut out = Array2::zeros(x.raw_dim());
    for t in 0..t_len {
        let mut row = out.row_mut(t as usize);
        for k in 1..=n {
            let fwd = x.row(clamp(t + k));
            let back = x.row(clamp(t - k));
            for ((o, &a), &b) in row.iter_mut().zip(fwd).zip(back) {
                *o += k as f64 * (a - b);
            }
        }
        row.mapv_inplace(|v| v / denom);
    }
    out
}

/// Full front end for one clip.
pub fn make_input(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureInput> {
    clip.validate()?;
    cfg.validate()?;
    let power = stft_power(&clip.samples, cfg.n_fft, cfg.hop)?;
    let fb = mel_filterbank(clip.sample_rate, cfg.n_fft, cfg.n_mels)?;
    let lm = log_mel(&power, &fb, cfg.amin)?;
    let d1 = deltas(&lm, cfg.delta_width, 1)?;
    let d2 = deltas(&lm, cfg.delta_width, 2)?;
    let mut data = Vec::with_capacity(3 * lm.len());
    for m in [&lm, &d1, &d2] {
        data.extend(m.iter().map(|&v| v as f32));
    }
    Ok(FeatureInput {
        source_id: clip.id.clone(),
        frames: lm.nrows(),
        mel_bins: cfg.n_mels,
        data,
    })
}
