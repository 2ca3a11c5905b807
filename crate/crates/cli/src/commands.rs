//! Subcommand implementations. Reports go to stdout (or `--report`) as JSON
//! and always echo the effective settings.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use mcta_core::cache::{FeatureCache, CACHE_DIR_ENV};
use mcta_core::checkpoint;
use mcta_core::config::Settings;
use mcta_core::dataset::{load_manifest, load_row_audio, synth_dataset, Manifest, SynthSpec, MANIFEST_FILE};
use mcta_core::features::make_input;
use mcta_core::model::{param_count, param_shapes, AttentionMode, MctaModel, ModelConfig};
use mcta_core::train::{ablation, cross_validate_with, Dataset};
use mcta_core::{augment, rng, Error};
use mcta_tensor::gradcheck::{self, GradCheckReport, MODEL_TOLERANCE, OP_TOLERANCE};
use mcta_tensor::{Mode, Tensor};
use rand::seq::index::sample;
use rand::Rng;
use serde_json::{json, Value};

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::Validation(msg.into()).into()
}

fn effective(settings: &Settings) -> Value {
    let map: BTreeMap<String, String> = settings.entries().into_iter().collect();
    json!(map)
}

/// Pretty JSON to `path` (directories created) or stdout.
fn emit(report: &Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report)? + "\n";
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
            log::info!("wrote {}", p.display());
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Flag, then `MCTA_CACHE_DIR`, then `cache/` beside the manifest.
fn cache_dir(flag: Option<&Path>, manifest: &Path) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => manifest.parent().unwrap_or(Path::new(".")).join("cache"),
    }
}

fn load_dataset(manifest_path: &Path, cache_flag: Option<&Path>, settings: &Settings) -> Result<(Manifest, Dataset, Value)> {
    let manifest = load_manifest(manifest_path)?;
    let dir = cache_dir(cache_flag, manifest_path);
    let cache = FeatureCache::new(&dir, &settings.features);
    let (data, stats) = Dataset::from_manifest(&manifest, &settings.features, Some(&cache))?;
    let summary = json!({
        "dir": dir,
        "hits": stats.hits,
        "misses": stats.misses,
        "repaired": stats.repaired,
    });
    Ok((manifest, data, summary))
}

fn parse_list<T: std::str::FromStr>(flag: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| invalid(format!("{flag}: {s:?}: {e}"))))
        .collect()
}

// ------------------------------------------------------------------ synth

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory (receives `audio/` and `manifest.csv`).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    clips_per_class: usize,
    #[arg(long, default_value_t = 5.0)]
    seconds: f64,
    #[arg(long, default_value_t = 22_050)]
    sample_rate: u32,
    /// Regenerate even if the output already holds a manifest.
    #[arg(long)]
    force: bool,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        num_classes: a.classes,
        clips_per_class: a.clips_per_class,
        clip_seconds: a.seconds,
        sample_rate: a.sample_rate,
        seed: a.seed,
    };
    spec.validate()?;
    let manifest_path = a.out.join(MANIFEST_FILE);
    if manifest_path.exists() && !a.force {
        println!("{} already exists; nothing to do (use --force to regenerate)", manifest_path.display());
        return Ok(());
    }
    let m = synth_dataset(&spec, &a.out)?;
    emit(
        &json!({
            "command": "synth",
            "spec": spec,
            "clips": m.len(),
            "classes": m.num_classes(),
            "folds": m.folds(),
            "manifest": manifest_path,
        }),
        None,
    )
}

// ------------------------------------------------------------------ features

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Cache directory; defaults to $MCTA_CACHE_DIR, then `cache/` beside
    /// the manifest.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

pub fn features(a: &FeaturesArgs, settings: Settings) -> Result<()> {
    settings.features.validate()?;
    let (_, data, cache) = load_dataset(&a.manifest, a.cache_dir.as_deref(), &settings)?;
    let frames: BTreeSet<usize> = data.examples.iter().map(|e| e.features.frames).collect();
    emit(
        &json!({
            "command": "features",
            "config": effective(&settings),
            "manifest": a.manifest,
            "clips": data.len(),
            "cache": cache,
            "channels": 3,
            "mel_bins": settings.features.n_mels,
            "frames": frames,
        }),
        None,
    )
}

// ------------------------------------------------------------------ augment

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for variant audio and the expanded manifest.
    #[arg(long)]
    out: PathBuf,
    /// Only augment originals in these folds, e.g. `1,2,3` (default: all).
    #[arg(long)]
    folds: Option<String>,
}

pub fn augment(a: &AugmentArgs, settings: Settings) -> Result<()> {
    settings.augment.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    let folds: Option<BTreeSet<u32>> = match &a.folds {
        Some(f) => Some(parse_list::<u32>("--folds", f)?.into_iter().collect()),
        None => None,
    };
    let expanded = augment::augment_manifest(&manifest, &settings.augment, &a.out, folds.as_ref())?;
    let out_manifest = a.out.join(MANIFEST_FILE);
    expanded.write(&out_manifest)?;
    emit(
        &json!({
            "command": "augment",
            "config": effective(&settings),
            "source": a.manifest,
            "manifest": out_manifest,
            "rows": expanded.len(),
            "originals": expanded.originals().count(),
            "variants": expanded.len() - expanded.originals().count(),
        }),
        None,
    )
}

// ------------------------------------------------------------------ train

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Attention mode: mcta, single or none (overrides model.attention_mode).
    #[arg(long)]
    mode: Option<AttentionMode>,
    /// Overrides train.epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides train.repeats.
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Save one checkpoint per (repeat, held-out fold) here.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn apply_run_flags(settings: &mut Settings, epochs: Option<usize>, repeats: Option<usize>) {
    if let Some(e) = epochs {
        settings.train.epochs = e;
    }
    if let Some(r) = repeats {
        settings.train.repeats = r;
    }
}

pub fn train(a: &TrainArgs, mut settings: Settings) -> Result<()> {
    if let Some(m) = a.mode {
        settings.model.attention_mode = m;
    }
    apply_run_flags(&mut settings, a.epochs, a.repeats);
    settings.validate()?;
    let (_, data, cache) = load_dataset(&a.manifest, a.cache_dir.as_deref(), &settings)?;
    if let Some(dir) = &a.checkpoint_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let save = |run: &mcta_core::train::FoldRun, model: &MctaModel<f32>| -> mcta_core::Result<()> {
        if let Some(dir) = &a.checkpoint_dir {
            let held: Vec<String> = run.held_out.iter().map(u32::to_string).collect();
            let path = dir.join(format!("{}-r{}-f{}.ckpt", run.mode, run.repeat, held.join("+")));
            checkpoint::save(&path, model)?;
            log::info!("saved {}", path.display());
        }
        Ok(())
    };
    let report = cross_validate_with(&data, &settings.model, &settings.train, &save)?;
    emit(
        &json!({
            "command": "train",
            "config": effective(&settings),
            "manifest": a.manifest,
            "cache": cache,
            "report": report,
        }),
        a.report.as_deref(),
    )
}

// ------------------------------------------------------------------ ablate

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated attention modes.
    #[arg(long, default_value = "mcta,single,none")]
    modes: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

pub fn ablate(a: &AblateArgs, mut settings: Settings) -> Result<()> {
    let modes: Vec<AttentionMode> = parse_list("--modes", &a.modes)?;
    if modes.is_empty() {
        bail!(invalid("--modes is empty"));
    }
    apply_run_flags(&mut settings, a.epochs, a.repeats);
    settings.validate()?;
    let (_, data, cache) = load_dataset(&a.manifest, a.cache_dir.as_deref(), &settings)?;
    let result = ablation(&data, &settings.model, &settings.train, &modes)?;
    emit(
        &json!({
            "command": "ablate",
            "config": effective(&settings),
            "manifest": a.manifest,
            "cache": cache,
            "modes": modes,
            "table": result.table,
            "reports": result.reports,
        }),
        a.report.as_deref(),
    )
}

// ------------------------------------------------------------------ attention-dump

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated clip ids from the manifest.
    #[arg(long)]
    clips: String,
    /// Channels sampled per clip.
    #[arg(long, default_value_t = 5)]
    channels: usize,
    /// Seed for the channel sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn attention_dump(a: &DumpArgs, settings: Settings) -> Result<()> {
    let mut model = checkpoint::load(&a.checkpoint)?;
    let manifest = load_manifest(&a.manifest)?;
    let ids: Vec<String> = parse_list("--clips", &a.clips)?;
    if ids.is_empty() {
        bail!(invalid("--clips is empty"));
    }
    let width = model.config.hidden_channels;
    if a.channels == 0 || a.channels > width {
        bail!(invalid(format!("--channels must be in 1..={width}, got {}", a.channels)));
    }
    if settings.features.n_mels != model.config.mel_bins {
        bail!(invalid(format!(
            "features.n_mels = {} but the checkpoint expects {} mel bins",
            settings.features.n_mels, model.config.mel_bins
        )));
    }
    let mut pick = rng::stream(a.seed, "attention-dump");
    let mut csv = String::from("clip_id,channel,t,weight\n");
    for id in &ids {
        let row = manifest
            .get(id)
            .ok_or_else(|| invalid(format!("clip {id:?} is not in {}", a.manifest.display())))?;
        let feat = make_input(&load_row_audio(row)?, &settings.features)?;
        let [c, t, f] = feat.shape();
        let x = Tensor::new([1, c, t, f], feat.data)?;
        let map = model.attention_map(x)?;
        let steps = map.shape()[2];
        let mut channels = sample(&mut pick, width, a.channels).into_vec();
        channels.sort_unstable();
        for ch in channels {
            for (ti, w) in map.data()[ch * steps..(ch + 1) * steps].iter().enumerate() {
                csv.push_str(&format!("{id},{ch},{ti},{w}\n"));
            }
        }
    }
    match &a.out {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}

// ------------------------------------------------------------------ gradcheck

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// `all`, or comma-separated op names (`model` is the end-to-end check
    /// of a small network).
    #[arg(long, default_value = "all")]
    ops: String,
    /// Coordinates probed per input tensor.
    #[arg(long, default_value_t = 24)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Small network in each attention mode, all parameters and the input
/// perturbed.
fn model_check(seed: u64, points: usize) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for mode in AttentionMode::ALL {
        let mut r = rng::stream(seed, &format!("gradcheck/{mode}"));
        let m = MctaModel::<f64>::new(ModelConfig::toy(4).with_mode(mode), &mut r)?;
        let mut inputs: Vec<Tensor<f64>> = m.params.iter().map(|p| p.value.clone()).collect();
        inputs.push(Tensor::<f64>::randn([2, 3, 16, 16], &mut r));
        let labels = [r.gen_range(0..4), r.gen_range(0..4)];
        let report = gradcheck::check(&format!("model_{mode}"), &inputs, points, seed, |tape, vars| {
            let mut local = m.clone();
            let (params, x) = vars.split_at(vars.len() - 1);
            let mut drop = rng::stream(seed, "gradcheck/dropout");
            let logits = local
                .forward(tape, params, x[0], Mode::Train, &mut drop)
                .map_err(|e| mcta_tensor::TensorError::State(e.to_string()))?;
            tape.softmax_cross_entropy(logits, &labels)
        })?;
        out.push(report);
    }
    Ok(out)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let all = a.ops.trim() == "all";
    let wanted: BTreeSet<String> = if all { BTreeSet::new() } else { parse_list("--ops", &a.ops)?.into_iter().collect() };
    let mut rows: Vec<(GradCheckReport, f64)> = Vec::new();
    let ops = gradcheck::op_suite(a.seed, a.points)?;
    let known: BTreeSet<String> = ops.iter().map(|r| r.name.clone()).chain(["model".to_string()]).collect();
    if let Some(bad) = wanted.iter().find(|w| !known.contains(*w)) {
        bail!(invalid(format!(
            "unknown op {bad:?}; known: {}",
            known.iter().cloned().collect::<Vec<_>>().join(", ")
        )));
    }
    rows.extend(ops.into_iter().filter(|r| all || wanted.contains(&r.name)).map(|r| (r, OP_TOLERANCE)));
    if all || wanted.contains("model") {
        rows.extend(model_check(a.seed, a.points)?.into_iter().map(|r| (r, MODEL_TOLERANCE)));
    }
    let mut failed = Vec::new();
    println!("{:<24} {:>12} {:>12} {:>7} {:>9}  status", "op", "max_rel", "max_abs", "points", "tolerance");
    for (r, tol) in &rows {
        let ok = r.passes(*tol);
        if !ok {
            failed.push(r.name.clone());
        }
        println!(
            "{:<24} {:>12.3e} {:>12.3e} {:>7} {:>9.0e}  {}",
            r.name,
            r.max_rel_error,
            r.max_abs_error,
            r.points,
            tol,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}

// ------------------------------------------------------------------ params

#[derive(Args, Debug)]
pub struct ParamsArgs {
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

pub fn params(a: &ParamsArgs, settings: Settings) -> Result<()> {
    settings.model.validate()?;
    let cfg = &settings.model;
    let shapes = param_shapes(cfg);
    let total = param_count(cfg);
    let per_mode: BTreeMap<String, usize> = AttentionMode::ALL
        .iter()
        .map(|&m| (m.to_string(), param_count(&cfg.clone().with_mode(m))))
        .collect();
    if a.json {
        let layers: Vec<Value> = shapes
            .iter()
            .map(|(name, shape)| json!({"name": name, "shape": shape, "count": shape.iter().product::<usize>()}))
            .collect();
        return emit(
            &json!({
                "command": "params",
                "config": effective(&settings),
                "total": total,
                "per_mode": per_mode,
                "layers": layers,
            }),
            None,
        );
    }
    println!("{:<32} {:<18} {:>10}", "parameter", "shape", "count");
    for (name, shape) in &shapes {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        println!("{:<32} {:<18} {:>10}", name, dims.join("x"), shape.iter().product::<usize>());
    }
    println!("total {total}");
    let modes: Vec<String> = per_mode.iter().map(|(m, n)| format!("{m}={n}")).collect();
    println!("per mode: {}", modes.join(" "));
    Ok(())
}
