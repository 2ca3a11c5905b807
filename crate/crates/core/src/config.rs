//! Flat `key = value` settings with namespaced keys, layered
//! defaults < file < overrides.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::augment::AugmentSpec;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::model::{AttentionMode, ModelConfig};
use crate::train::{FoldPlan, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub features: FeatureConfig,
    pub augment: AugmentSpec,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Validation(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Validation(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

/// `"5x4"` or `"5,4"`.
fn parse_pair(key: &str, value: &str) -> Result<(usize, usize)> {
    let v = value.trim();
    let (a, b) = v
        .split_once(['x', ','])
        .ok_or_else(|| Error::Validation(format!("{key}: expected AxB, got {value:?}")))?;
    Ok((parse(key, a)?, parse(key, b)?))
}

fn pair((a, b): (usize, usize)) -> String {
    format!("{a}x{b}")
}

fn parse_folds(key: &str, value: &str) -> Result<Vec<u32>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

/// `kfold` or `fixed:<train folds>:<validation folds>`, e.g. `fixed:1:2`.
pub fn parse_fold_plan(key: &str, value: &str) -> Result<FoldPlan> {
    let v = value.trim();
    if v.eq_ignore_ascii_case("kfold") {
        return Ok(FoldPlan::KFold);
    }
    let parts: Vec<&str> = v.split(':').collect();
    match parts.as_slice() {
        ["fixed", train, val] => Ok(FoldPlan::Fixed {
            train: parse_folds(key, train)?,
            validation: parse_folds(key, val)?,
        }),
        _ => Err(Error::Validation(format!(
            "{key}: expected kfold or fixed:<train>:<validation>, got {value:?}"
        ))),
    }
}

pub fn fold_plan_string(plan: &FoldPlan) -> String {
    let join = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    match plan {
        FoldPlan::KFold => "kfold".into(),
        FoldPlan::Fixed { train, validation } => format!("fixed:{}:{}", join(train), join(validation)),
    }
}

impl ModelConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let full = format!("model.{key}");
        let k = full.as_str();
        let e = &mut self.embedding;
        match key {
            "hidden_channels" => self.hidden_channels = parse(k, value)?,
            "attention_mode" => self.attention_mode = AttentionMode::from_str(value)?,
            "shared_attention_conv" => self.shared_attention_conv = parse_bool(k, value)?,
            "dropout_rate" => self.dropout_rate = parse(k, value)?,
            "num_classes" => self.num_classes = parse(k, value)?,
            "mel_bins" => self.mel_bins = parse(k, value)?,
            "block1_filters" => e.block1_filters = parse(k, value)?,
            "block2_filters" => e.block2_filters = parse(k, value)?,
            "conv_kernel" => e.conv_kernel = parse_pair(k, value)?,
            "pool1" => e.pool1 = parse_pair(k, value)?,
            "pool2" => e.pool2 = parse_pair(k, value)?,
            "final_kernel" => e.final_kernel = parse_pair(k, value)?,
            "final_stride" => e.final_stride = parse_pair(k, value)?,
            "bn_momentum" => self.bn_momentum = parse(k, value)?,
            "bn_epsilon" => self.bn_epsilon = parse(k, value)?,
            "norm_epsilon" => self.norm_epsilon = parse(k, value)?,
            _ => return Err(Error::Validation(format!("unknown key {full}"))),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let e = &self.embedding;
        [
            ("hidden_channels", self.hidden_channels.to_string()),
            ("attention_mode", self.attention_mode.to_string()),
            ("shared_attention_conv", self.shared_attention_conv.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("mel_bins", self.mel_bins.to_string()),
            ("block1_filters", e.block1_filters.to_string()),
            ("block2_filters", e.block2_filters.to_string()),
            ("conv_kernel", pair(e.conv_kernel)),
            ("pool1", pair(e.pool1)),
            ("pool2", pair(e.pool2)),
            ("final_kernel", pair(e.final_kernel)),
            ("final_stride", pair(e.final_stride)),
            ("bn_momentum", self.bn_momentum.to_string()),
            ("bn_epsilon", self.bn_epsilon.to_string()),
            ("norm_epsilon", self.norm_epsilon.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("model.{k}"), v))
        .collect()
    }
}

impl Settings {
    /// Applies one namespaced setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (ns, name) = key
            .split_once('.')
            .ok_or_else(|| Error::Validation(format!("unknown key {key} (expected namespace.key)")))?;
        let unknown = || Error::Validation(format!("unknown key {key}"));
        match ns {
            "model" => self.model.set(name, value)?,
            "train" => {
                let t = &mut self.train;
                match name {
                    "lr_init" => t.lr_init = parse(key, value)?,
                    "lr_decay" => t.lr_decay = parse(key, value)?,
                    "batch_size" => t.batch_size = parse(key, value)?,
                    "epochs" => t.epochs = parse(key, value)?,
                    "repeats" => t.repeats = parse(key, value)?,
                    "seed" => t.seed = parse(key, value)?,
                    "folds" => t.folds = parse_fold_plan(key, value)?,
                    _ => return Err(unknown()),
                }
            }
            "features" => {
                let f = &mut self.features;
                match name {
                    "n_fft" => f.n_fft = parse(key, value)?,
                    "hop" => f.hop = parse(key, value)?,
                    "n_mels" => f.n_mels = parse(key, value)?,
                    "delta_width" => f.delta_width = parse(key, value)?,
                    "amin" => f.amin = parse(key, value)?,
                    _ => return Err(unknown()),
                }
            }
            "augment" => {
                let a = &mut self.augment;
                match name {
                    "max_shift_seconds" => a.max_shift_seconds = parse(key, value)?,
                    "pitch_low" => a.pitch_low = parse(key, value)?,
                    "pitch_high" => a.pitch_high = parse(key, value)?,
                    "noise_factor" => a.noise_factor = parse(key, value)?,
                    "integer_pitch" => a.integer_pitch = parse_bool(key, value)?,
                    "seed" => a.seed = parse(key, value)?,
                    _ => return Err(unknown()),
                }
            }
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// Every effective setting, in a stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = self.model.entries();
        let t = &self.train;
        for (k, v) in [
            ("lr_init", t.lr_init.to_string()),
            ("lr_decay", t.lr_decay.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("repeats", t.repeats.to_string()),
            ("seed", t.seed.to_string()),
            ("folds", fold_plan_string(&t.folds)),
        ] {
            out.push((format!("train.{k}"), v));
        }
        let f = &self.features;
        for (k, v) in [
            ("n_fft", f.n_fft.to_string()),
            ("hop", f.hop.to_string()),
            ("n_mels", f.n_mels.to_string()),
            ("delta_width", f.delta_width.to_string()),
            ("amin", f.amin.to_string()),
        ] {
            out.push((format!("features.{k}"), v));
        }
        let a = &self.augment;
        for (k, v) in [
            ("max_shift_seconds", a.max_shift_seconds.to_string()),
            ("pitch_low", a.pitch_low.to_string()),
            ("pitch_high", a.pitch_high.to_string()),
            ("noise_factor", a.noise_factor.to_string()),
            ("integer_pitch", a.integer_pitch.to_string()),
            ("seed", a.seed.to_string()),
        ] {
            out.push((format!("augment.{k}"), v));
        }
        out
    }

    /// Text form accepted by [`Settings::apply_text`].
    pub fn render(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Validation(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.features.validate()?;
        self.augment.validate()?;
        if self.features.n_mels != self.model.mel_bins {
            return Err(Error::Validation(format!(
                "features.n_mels = {} but model.mel_bins = {}",
                self.features.n_mels, self.model.mel_bins
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut s = Settings::default();
        s.model = ModelConfig::desk(8);
        s.train.folds = FoldPlan::Fixed {
            train: vec![1, 3],
            validation: vec![2],
        };
        s.augment.integer_pitch = true;
        s.train.lr_init = 3e-4;
        let mut back = Settings::default();
        back.apply_text(&s.render(), "mem").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_rejected_with_line() {
        let mut s = Settings::default();
        let err = s.apply_text("train.epochs = 3\nmodel.colour = red\n", "x.cfg").unwrap_err().to_string();
        assert!(err.contains("x.cfg:2") && err.contains("model.colour"), "{err}");
        assert!(s.set("epochs", "3").is_err());
        assert!(s.set("nope.epochs", "3").is_err());
    }

    #[test]
    fn layering_later_wins() {
        let mut s = Settings::default();
        s.apply_text("train.epochs = 7 # file\n\n# comment\nmodel.pool1 = 2x8", "f").unwrap();
        s.set("train.epochs", "2").unwrap();
        assert_eq!(s.train.epochs, 2);
        assert_eq!(s.model.embedding.pool1, (2, 8));
    }

    #[test]
    fn bad_values_rejected() {
        let mut s = Settings::default();
        assert!(s.set("train.epochs", "many").is_err());
        assert!(s.set("model.pool1", "2").is_err());
        assert!(s.set("model.shared_attention_conv", "maybe").is_err());
        assert!(s.set("train.folds", "fixed:1").is_err());
        assert!(s.set("model.attention_mode", "spectral").is_err());
    }

    #[test]
    fn mel_mismatch_is_invalid() {
        let mut s = Settings::default();
        s.features.n_mels = 64;
        assert!(s.validate().is_err());
    }
}
