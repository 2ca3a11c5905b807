//! Offline training-set expansion: delay, pitch shift, additive noise.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::write_wav_f32;
use crate::dataset::{load_row_audio, Manifest, ManifestRow, VariantKind};
use crate::dsp;
use crate::error::{Error, Result};
use crate::rng;

/// Phase-vocoder analysis parameters.
pub const VOCODER_FFT: usize = 1024;
pub const VOCODER_HOP: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub max_shift_seconds: f64,
    pub pitch_low: f64,
    pub pitch_high: f64,
    pub noise_factor: f64,
    /// Draw whole semitones instead of a continuous uniform value.
    pub integer_pitch: bool,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            max_shift_seconds: 2.5,
            pitch_low: -4.0,
            pitch_high: 4.0,
            noise_factor: 0.01,
            integer_pitch: false,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_shift_seconds >= 0.0) || !self.max_shift_seconds.is_finite() {
            return Err(Error::Validation(format!("max shift must be >= 0, got {}", self.max_shift_seconds)));
        }
        if !(self.pitch_low <= self.pitch_high) || !self.pitch_low.is_finite() || !self.pitch_high.is_finite() {
            return Err(Error::Validation(format!(
                "pitch range [{}, {}] is empty",
                self.pitch_low, self.pitch_high
            )));
        }
        if self.integer_pitch && self.pitch_low.ceil() > self.pitch_high.floor() {
            return Err(Error::Validation(format!(
                "pitch range [{}, {}] holds no whole semitone",
                self.pitch_low, self.pitch_high
            )));
        }
        if !(self.noise_factor >= 0.0) || !self.noise_factor.is_finite() {
            return Err(Error::Validation(format!("noise factor must be >= 0, got {}", self.noise_factor)));
        }
        Ok(())
    }
}

/// Delays the clip by `round(shift_seconds * sample_rate)` samples, filling
/// the head with zeros and dropping the tail.
pub fn time_shift(samples: &[f32], shift_seconds: f64, sample_rate: u32) -> Result<Vec<f32>> {
    if !(shift_seconds >= 0.0) || !shift_seconds.is_finite() {
        return Err(Error::InvalidInput(format!(
            "time shift must be a non-negative delay, got {shift_seconds}"
        )));
    }
    let d = ((shift_seconds * sample_rate as f64).round() as usize).min(samples.len());
    let mut out = vec![0.0; samples.len()];
    out[d..].copy_from_slice(&samples[..samples.len() - d]);
    Ok(out)
}

/// Re-times an STFT so frame `j` of the output samples the input at frame
/// `j * rate`, with magnitudes interpolated and phases advanced by the
/// per-bin instantaneous frequency.
fn phase_vocoder(frames: &[Vec<Complex64>], rate: f64, hop: usize, n_fft: usize) -> Vec<Vec<Complex64>> {
    let Some(first) = frames.first() else {
        return Vec::new();
    };
    let bins = first.len();
    let advance: Vec<f64> = (0..bins).map(|k| 2.0 * PI * k as f64 * hop as f64 / n_fft as f64).collect();
    let zero = vec![Complex64::new(0.0, 0.0); bins];
    let mut phase: Vec<f64> = first.iter().map(|c| c.arg()).collect();
    let mut out = Vec::new();
    let mut t = 0.0f64;
    while t < frames.len() as f64 {
        let i = t.floor() as usize;
        let alpha = t - i as f64;
        let a = &frames[i];
        let b = frames.get(i + 1).unwrap_or(&zero);
        let mut col = Vec::with_capacity(bins);
        for k in 0..bins {
            let mag = (1.0 - alpha) * a[k].norm() + alpha * b[k].norm();
            col.push(Complex64::from_polar(mag, phase[k]));
            let mut d = b[k].arg() - a[k].arg() - advance[k];
            d -= 2.0 * PI * (d / (2.0 * PI)).round();
            phase[k] += advance[k] + d;
        }
        out.push(col);
        t += rate;
    }
    out
}

/// Changes duration by `stretch` (2.0 doubles it) without changing pitch.
pub fn time_stretch(samples: &[f32], stretch: f64) -> Vec<f32> {
    let spec = dsp::stft(samples, VOCODER_FFT, VOCODER_HOP);
    let retimed = phase_vocoder(&spec, 1.0 / stretch, VOCODER_HOP, VOCODER_FFT);
    let len = (samples.len() as f64 * stretch).round() as usize;
    dsp::istft(&retimed, VOCODER_FFT, VOCODER_HOP, len)
}

/// Shifts pitch by `semitones`, keeping length and sample rate: the clip is
/// stretched by `r = 2^(semitones/12)` and then resampled by `1/r`.
pub fn pitch_shift(samples: &[f32], semitones: f64, sample_rate: u32) -> Result<Vec<f32>> {
    if !semitones.is_finite() {
        return Err(Error::InvalidInput(format!("pitch shift must be finite, got {semitones}")));
    }
    if samples.is_empty() || sample_rate == 0 {
        return Err(Error::InvalidInput("pitch shift needs a non-empty clip".into()));
    }
    let r = 2f64.powf(semitones / 12.0);
    let stretched = time_stretch(samples, r);
    Ok(dsp::resample(&stretched, r, samples.len()))
}

/// `out = in + factor * n` with `n ~ N(0, 1)` per sample.
pub fn add_noise<R: Rng>(samples: &[f32], factor: f64, rng: &mut R) -> Result<Vec<f32>> {
    if !(factor >= 0.0) || !factor.is_finite() {
        return Err(Error::InvalidInput(format!("noise factor must be >= 0, got {factor}")));
    }
    Ok(samples
        .iter()
        .map(|&s| (s as f64 + factor * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect())
}

/// Id of the augmented copy of `source` produced by `kind` under `seed`.
pub fn variant_id(source: &str, kind: VariantKind, seed: u64) -> String {
    format!("{source}__{kind}_s{seed}")
}

/// Applies one augmentation with parameters drawn from a stream keyed by
/// (seed, source id, kind). Returns the audio and the drawn parameter.
pub fn make_variant(
    samples: &[f32],
    sample_rate: u32,
    source_id: &str,
    kind: VariantKind,
    spec: &AugmentSpec,
) -> Result<(Vec<f32>, f64)> {
    let mut rng = rng::stream(spec.seed, &format!("augment/{source_id}/{kind}"));
    match kind {
        VariantKind::Original => Ok((samples.to_vec(), 0.0)),
        VariantKind::TimeShift => {
            let s = rng.gen_range(0.0..=spec.max_shift_seconds);
            Ok((time_shift(samples, s, sample_rate)?, s))
        }
        VariantKind::PitchShift => {
            let s = if spec.integer_pitch {
                rng.gen_range(spec.pitch_low.ceil() as i64..=spec.pitch_high.floor() as i64) as f64
            } else {
                rng.gen_range(spec.pitch_low..=spec.pitch_high)
            };
            Ok((pitch_shift(samples, s, sample_rate)?, s))
        }
        VariantKind::Noise => Ok((add_noise(samples, spec.noise_factor, &mut rng)?, spec.noise_factor)),
    }
}

/// Returns the input rows followed by three variants (delay, pitch, noise)
/// for every original whose fold is in `folds` (all folds when `None`).
/// Variant audio is written as float WAV under `out_dir/audio`. Existing
/// variant rows in the input are carried over but never re-augmented.
pub fn augment_manifest(
    manifest: &Manifest,
    spec: &AugmentSpec,
    out_dir: &Path,
    folds: Option<&BTreeSet<u32>>,
) -> Result<Manifest> {
    spec.validate()?;
    let sources: Vec<&ManifestRow> = manifest
        .originals()
        .filter(|r| folds.map_or(true, |f| f.contains(&r.fold)))
        .collect();
    let audio_dir = out_dir.join("audio");
    let results: Vec<Result<Vec<ManifestRow>>> = sources
        .par_iter()
        .map(|row| {
            let clip = load_row_audio(row)?;
            let mut rows = Vec::with_capacity(3);
            for kind in VariantKind::AUGMENTED {
                let (audio, _) = make_variant(&clip.samples, clip.sample_rate, &row.id, kind, spec)?;
                let id = variant_id(&row.id, kind, spec.seed);
                let path = audio_dir.join(format!("{id}.wav"));
                write_wav_f32(&path, &audio, clip.sample_rate)?;
                rows.push(ManifestRow {
                    id,
                    path,
                    label: row.label,
                    fold: row.fold,
                    variant_kind: kind,
                    source_id: row.id.clone(),
                });
            }
            Ok(rows)
        })
        .collect();

    let mut rows = manifest.rows.clone();
    let mut failures = Vec::new();
    for (row, res) in sources.iter().zip(results) {
        match res {
            Ok(v) => rows.extend(v),
            Err(e) => failures.push((row.id.clone(), e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Batch {
            total: sources.len(),
            failures,
        });
    }
    let out = Manifest::new(rows);
    out.validate(u32::MAX)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shift_by_definition() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(time_shift(&x, 2.0, 1).unwrap(), vec![0.0, 0.0, 1.0, 2.0]);
        assert_eq!(time_shift(&x, 0.0, 1).unwrap(), x.to_vec());
        assert_eq!(time_shift(&x, 10.0, 1).unwrap(), vec![0.0; 4]);
        assert!(time_shift(&x, -0.1, 1).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let x = [0.5f32, -0.25, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_noise(&x, 0.0, &mut rng).unwrap(), x.to_vec());
        assert!(add_noise(&x, -1.0, &mut rng).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(AugmentSpec::default().validate().is_ok());
        let bad = AugmentSpec {
            pitch_low: 1.0,
            pitch_high: 0.0,
            ..AugmentSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentSpec {
            max_shift_seconds: -1.0,
            ..AugmentSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentSpec {
            integer_pitch: true,
            pitch_low: 0.2,
            pitch_high: 0.8,
            ..AugmentSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stretch_changes_length() {
        let x: Vec<f32> = (0..8000).map(|i| (i as f32 * 0.05).sin()).collect();
        assert_eq!(time_stretch(&x, 2.0).len(), 16_000);
        assert_eq!(time_stretch(&x, 0.5).len(), 4000);
    }

    #[test]
    fn variant_params_in_range_and_keyed() {
        let spec = AugmentSpec::default();
        let x = vec![0.1f32; 2000];
        let (_, s) = make_variant(&x, 1000, "a", VariantKind::TimeShift, &spec).unwrap();
        assert!((0.0..=2.5).contains(&s));
        let (a, p) = make_variant(&x, 1000, "a", VariantKind::PitchShift, &spec).unwrap();
        assert!((-4.0..=4.0).contains(&p));
        assert_eq!(a.len(), x.len());
        let int = AugmentSpec {
            integer_pitch: true,
            ..spec.clone()
        };
        let (_, p) = make_variant(&x, 1000, "a", VariantKind::PitchShift, &int).unwrap();
        assert_eq!(p, p.round());
        assert_eq!(variant_id("a", VariantKind::Noise, 3), "a__noise_s3");
    }
}
