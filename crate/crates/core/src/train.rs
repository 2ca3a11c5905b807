//! Minibatch Adam training, k-fold cross-validation, and attention-mode
//! ablations.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;
use std::time::Instant;

use mcta_tensor::{adam_step, AdamConfig, AdamState, Mode, Tape, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::cache::{CacheOutcome, FeatureCache};
use crate::dataset::{load_row_audio, Manifest, VariantKind};
use crate::error::{Error, Result};
use crate::features::{make_input, FeatureConfig, FeatureInput};
use crate::model::{param_count, AttentionMode, MctaModel, ModelConfig};
use crate::rng;

/// Which folds are trained on and which are held out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldPlan {
    /// Every fold present in the manifest is held out once.
    KFold,
    /// One run: train on `train`, evaluate on `validation`.
    Fixed { train: Vec<u32>, validation: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub repeats: usize,
    pub seed: u64,
    pub folds: FoldPlan,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 0.001,
            lr_decay: 0.5,
            batch_size: 50,
            epochs: 50,
            repeats: 5,
            seed: 0,
            folds: FoldPlan::KFold,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.repeats == 0 {
            return Err(Error::Validation(format!(
                "batch size, epochs and repeats must be >= 1 (got {}, {}, {})",
                self.batch_size, self.epochs, self.repeats
            )));
        }
        if !(self.lr_init > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Validation(format!(
                "need lr_init > 0 and lr_decay in (0, 1] (got {}, {})",
                self.lr_init, self.lr_decay
            )));
        }
        if let FoldPlan::Fixed { train, validation } = &self.folds {
            if train.is_empty() || validation.is_empty() {
                return Err(Error::Validation("fixed split needs train and validation folds".into()));
            }
            if train.iter().any(|f| validation.contains(f)) {
                return Err(Error::Validation("train and validation folds overlap".into()));
            }
        }
        Ok(())
    }
}

/// Learning rate for the next epoch: decayed when the last two epoch-to-epoch
/// comparisons both failed to decrease the training loss.
pub fn lr_update(history: &[f64], lr: f64, decay: f64) -> f64 {
    match history {
        [.., a, b, c] if c >= b && b >= a => lr * decay,
        _ => lr,
    }
}

/// One feature map with its labels.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub source_id: String,
    pub label: usize,
    pub fold: u32,
    pub kind: VariantKind,
    pub features: Arc<FeatureInput>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub repaired: usize,
}

impl Dataset {
    /// Extracts (or loads cached) features for every manifest row, in
    /// parallel; failures are collected into one error.
    pub fn from_manifest(
        manifest: &Manifest,
        cfg: &FeatureConfig,
        cache: Option<&FeatureCache>,
    ) -> Result<(Self, CacheStats)> {
        cfg.validate()?;
        let results: Vec<Result<(FeatureInput, CacheOutcome)>> = manifest
            .rows
            .par_iter()
            .map(|row| {
                let extract = || -> Result<FeatureInput> {
                    let clip: AudioClip = load_row_audio(row)?;
                    make_input(&clip, cfg)
                };
                match cache {
                    Some(c) => c.get_or_insert_with(&row.id, extract),
                    None => extract().map(|f| (f, CacheOutcome::Miss)),
                }
            })
            .collect();
        let mut stats = CacheStats::default();
        let mut examples = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (row, res) in manifest.rows.iter().zip(results) {
            match res {
                Ok((f, outcome)) => {
                    match outcome {
                        CacheOutcome::Hit => stats.hits += 1,
                        CacheOutcome::Miss => stats.misses += 1,
                        CacheOutcome::Repaired => stats.repaired += 1,
                    }
                    examples.push(Example {
                        id: row.id.clone(),
                        source_id: row.source_id.clone(),
                        label: row.label,
                        fold: row.fold,
                        kind: row.variant_kind,
                        features: Arc::new(f),
                    });
                }
                Err(e) => failures.push((row.id.clone(), e.to_string())),
            }
        }
        if !failures.is_empty() {
            return Err(Error::Batch {
                total: manifest.len(),
                failures,
            });
        }
        Ok((Self { examples }, stats))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.examples.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    pub fn folds(&self) -> BTreeSet<u32> {
        self.examples.iter().filter(|e| e.kind == VariantKind::Original).map(|e| e.fold).collect()
    }

    /// Training examples (all kinds) from `train` folds and held-out
    /// originals from `held_out` folds. Variants whose source is held out
    /// never reach the training side.
    pub fn split(&self, train: &[u32], held_out: &[u32]) -> Result<(Vec<&Example>, Vec<&Example>)> {
        let val: Vec<&Example> = self
            .examples
            .iter()
            .filter(|e| e.kind == VariantKind::Original && held_out.contains(&e.fold))
            .collect();
        let val_ids: HashSet<&str> = val.iter().map(|e| e.id.as_str()).collect();
        let tr: Vec<&Example> = self
            .examples
            .iter()
            .filter(|e| train.contains(&e.fold) && !held_out.contains(&e.fold))
            .filter(|e| !val_ids.contains(e.source_id.as_str()))
            .collect();
        if tr.is_empty() || val.is_empty() {
            return Err(Error::InvalidInput(format!(
                "empty split: {} training and {} held-out examples for held-out folds {held_out:?}",
                tr.len(),
                val.len()
            )));
        }
        Ok((tr, val))
    }
}

/// Stacks examples into a `B x 3 x T x F` tensor.
pub fn batch_tensor(examples: &[&Example]) -> Result<Tensor<f32>> {
    let first = examples
        .first()
        .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    let shape = first.features.shape();
    let mut data = Vec::with_capacity(examples.len() * first.features.data.len());
    for e in examples {
        if e.features.shape() != shape {
            return Err(Error::InvalidInput(format!(
                "clip {} has feature shape {:?}, batch expects {shape:?}",
                e.id,
                e.features.shape()
            )));
        }
        data.extend_from_slice(&e.features.data);
    }
    Ok(Tensor::new([examples.len(), shape[0], shape[1], shape[2]], data)?)
}

/// Order-sensitive digest of the ids in one epoch's batches.
fn digest(batches: &[Vec<usize>], data: &[&Example]) -> u64 {
    let mut bytes = Vec::new();
    for b in batches {
        for &i in b {
            bytes.extend_from_slice(data[i].id.as_bytes());
            bytes.push(0);
        }
        bytes.push(1);
    }
    rng::fnv1a(&bytes)
}

/// Splits `0..n` into batches of `size`; a trailing batch of one sample is
/// merged into its predecessor because batch statistics are undefined for it.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// Arg-max class per example in evaluation mode.
pub fn predict(model: &mut MctaModel<f32>, data: &[&Example], batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let logits = model.predict(batch_tensor(chunk)?)?;
        let k = logits.shape()[1];
        for row in logits.data().chunks_exact(k) {
            let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            out.push(best);
        }
    }
    Ok(out)
}

/// Fraction of examples whose arg-max logit is the label.
pub fn evaluate(model: &mut MctaModel<f32>, data: &[&Example], batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty set".into()));
    }
    let pred = predict(model, data, batch_size)?;
    let correct = pred.iter().zip(data).filter(|(p, e)| **p == e.label).count();
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub mode: AttentionMode,
    pub held_out: Vec<u32>,
    pub repeat: usize,
    pub seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
    pub accuracy: f64,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    /// Learning rate used in each epoch.
    pub lr_trace: Vec<f64>,
    /// Digest of the batch composition of each epoch.
    pub batch_digests: Vec<u64>,
}

pub struct TrainOutcome {
    pub model: MctaModel<f32>,
    pub run: FoldRun,
}

/// Trains a fresh model on `train` and scores it on `eval`. Initialisation,
/// shuffling and dropout draw from separate streams keyed by `seed` and
/// `tag`, so two calls with equal arguments are bitwise identical.
pub fn train_fold(
    train: &[&Example],
    eval: &[&Example],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    tag: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::InvalidInput(format!(
            "empty split ({} training, {} evaluation examples)",
            train.len(),
            eval.len()
        )));
    }
    let mut model = MctaModel::<f32>::new(model_cfg.clone(), &mut rng::stream(seed, &format!("init/{tag}")))?;
    let mut adam = AdamState::for_params(&model.params, AdamConfig::default());
    let mut shuffle = rng::stream(seed, &format!("shuffle/{tag}"));
    let mut dropout = rng::stream(seed, &format!("dropout/{tag}"));
    let labels: Vec<usize> = train.iter().map(|e| e.label).collect();
    if let Some(bad) = labels.iter().find(|&&l| l >= model_cfg.num_classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} outside the model's {} classes",
            model_cfg.num_classes
        )));
    }

    let mut lr = cfg.lr_init;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut run = FoldRun {
        mode: model_cfg.attention_mode,
        held_out: Vec::new(),
        repeat: 0,
        seed,
        train_size: train.len(),
        eval_size: eval.len(),
        accuracy: 0.0,
        loss_history: Vec::with_capacity(cfg.epochs),
        lr_trace: Vec::with_capacity(cfg.epochs),
        batch_digests: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let plan = batches(&order, cfg.batch_size);
        let mut total = 0.0;
        for idx in &plan {
            let items: Vec<&Example> = idx.iter().map(|&i| train[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let x = tape.constant(batch_tensor(&items)?);
            let logits = model.forward(&mut tape, &vars, x, Mode::Train, &mut dropout)?;
            let loss = tape.softmax_cross_entropy(logits, &y)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::Validation(format!("training loss diverged at epoch {}", epoch + 1)));
            }
            total += value * idx.len() as f64;
            tape.backward(loss)?;
            model.collect_grads(&mut tape, &vars);
            adam_step(&mut model.params, &mut adam, lr)?;
        }
        let mean = total / train.len() as f64;
        run.loss_history.push(mean);
        run.lr_trace.push(lr);
        run.batch_digests.push(digest(&plan, train));
        log::info!("{tag} epoch {}/{}: loss {mean:.4} lr {lr:.2e}", epoch + 1, cfg.epochs);
        lr = lr_update(&run.loss_history, lr, cfg.lr_decay);
    }
    run.accuracy = evaluate(&mut model, eval, cfg.batch_size)?;
    Ok(TrainOutcome { model, run })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub config_hash: String,
    pub param_count: usize,
    pub runs: Vec<FoldRun>,
    /// Mean accuracy over folds, one entry per repeat.
    pub repeat_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample standard deviation of `repeat_accuracies` (0 for one repeat).
    pub std_accuracy: f64,
    pub wall_seconds: f64,
}

pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    let text = serde_json::to_string(&(model, train)).expect("configs serialize");
    format!("{:016x}", rng::fnv1a(text.as_bytes()))
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// `(held_out, train)` fold lists for each run of the plan.
pub fn fold_runs(data: &Dataset, plan: &FoldPlan) -> Result<Vec<(Vec<u32>, Vec<u32>)>> {
    let present = data.folds();
    match plan {
        FoldPlan::KFold => {
            if present.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "cross-validation needs at least two folds with originals, found {present:?}"
                )));
            }
            Ok(present
                .iter()
                .map(|&f| (vec![f], present.iter().copied().filter(|&g| g != f).collect()))
                .collect())
        }
        FoldPlan::Fixed { train, validation } => {
            for f in train.iter().chain(validation) {
                if !present.contains(f) {
                    return Err(Error::InvalidInput(format!("fold {f} has zero samples")));
                }
            }
            Ok(vec![(validation.clone(), train.clone())])
        }
    }
}

/// Trains and evaluates every (repeat, held-out fold) pair. Repeat `i` uses
/// seed `train.seed + i`.
pub fn cross_validate(data: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<RunReport> {
    cross_validate_with(data, model_cfg, cfg, &|_, _| Ok(()))
}

/// [`cross_validate`], handing each trained model to `on_model` (e.g. to
/// write a checkpoint) before it is dropped.
pub fn cross_validate_with(
    data: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    on_model: &(dyn Fn(&FoldRun, &MctaModel<f32>) -> Result<()> + Sync),
) -> Result<RunReport> {
    cfg.validate()?;
    model_cfg.validate()?;
    let start = Instant::now();
    let plan = fold_runs(data, &cfg.folds)?;
    let mut jobs = Vec::new();
    for repeat in 0..cfg.repeats {
        for (held, train) in &plan {
            jobs.push((repeat, held.clone(), train.clone()));
        }
    }
    let runs: Vec<FoldRun> = jobs
        .par_iter()
        .map(|(repeat, held, train)| -> Result<FoldRun> {
            let (tr, ev) = data.split(train, held)?;
            let seed = cfg.seed + *repeat as u64;
            let tag = format!("fold{}", held.iter().map(u32::to_string).collect::<Vec<_>>().join("+"));
            let out = train_fold(&tr, &ev, model_cfg, cfg, seed, &tag)?;
            let mut run = out.run;
            run.held_out = held.clone();
            run.repeat = *repeat;
            on_model(&run, &out.model)?;
            log::info!(
                "{} repeat {} held-out {:?}: accuracy {:.4}",
                model_cfg.attention_mode,
                repeat,
                held,
                run.accuracy
            );
            Ok(run)
        })
        .collect::<Result<_>>()?;
    let repeat_accuracies: Vec<f64> = (0..cfg.repeats)
        .map(|r| mean_std(&runs.iter().filter(|x| x.repeat == r).map(|x| x.accuracy).collect::<Vec<_>>()).0)
        .collect();
    let (mean_accuracy, std_accuracy) = mean_std(&repeat_accuracies);
    Ok(RunReport {
        config_hash: config_hash(model_cfg, cfg),
        param_count: param_count(model_cfg),
        model: model_cfg.clone(),
        train: cfg.clone(),
        runs,
        repeat_accuracies,
        mean_accuracy,
        std_accuracy,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AttentionMode,
    pub param_count: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub table: Vec<AblationRow>,
    pub reports: Vec<RunReport>,
}

/// Cross-validates each mode with the same seeds, folds and batch order.
pub fn ablation(
    data: &Dataset,
    base: &ModelConfig,
    cfg: &TrainConfig,
    modes: &[AttentionMode],
) -> Result<AblationReport> {
    if modes.is_empty() {
        return Err(Error::Validation("no attention modes requested".into()));
    }
    let mut reports = Vec::with_capacity(modes.len());
    for &mode in modes {
        reports.push(cross_validate(data, &base.clone().with_mode(mode), cfg)?);
    }
    let table = reports
        .iter()
        .map(|r| AblationRow {
            mode: r.model.attention_mode,
            param_count: r.param_count,
            mean_accuracy: r.mean_accuracy,
            std_accuracy: r.std_accuracy,
        })
        .collect();
    Ok(AblationReport { table, reports })
}
