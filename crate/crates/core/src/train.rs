//! Training driver: run configuration, the epoch loop, logging, and
//! checkpoint management. The CLI is a thin wrapper around this module.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, OptimizerState};
use crate::data::{
    apply_norm, batch_iter, fit_norm, load_binary, stratified_split, synth_generate,
    window_dataset, Batch, Dataset, Label, NormStats, SynthSpec,
};
use crate::error::{Error, Result};
use crate::metrics::argmax_class;
use crate::model::{DdxConfig, Head, Mode, Model};
use crate::optim::{
    adam_step, clip_global_norm, sgd_momentum_step, AdamParams, AdamState, Schedule,
    ScheduleKind, SgdState,
};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Update rule selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub schedule: ScheduleKind,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
}

/// Where records come from: a binary dataset file or a synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Path(PathBuf),
    Synth(SynthSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// When set, records are windowed to this length before splitting.
    pub window_len: Option<usize>,
    /// Window stride; defaults to `window_len` (non-overlapping tiling).
    pub stride: Option<usize>,
    pub val_fraction: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: u64,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    /// Console echo period; the log file gets every epoch.
    pub log_every: u64,
}

/// One JSON document configuring a whole run; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: DdxConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.optim.lr.is_nan() || self.optim.lr <= 0.0 {
            return Err(Error::Config(format!("optim.lr must be > 0, got {}", self.optim.lr)));
        }
        if self.optim.weight_decay < 0.0 {
            return Err(Error::Config("optim.weight_decay must be >= 0".into()));
        }
        if let Some(c) = self.optim.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("optim.clip_norm must be > 0, got {c}")));
            }
        }
        if let ScheduleKind::StepDecay { factor, every_n_epochs } = self.optim.schedule {
            if factor.is_nan() || factor <= 0.0 || every_n_epochs == 0 {
                return Err(Error::Config("optim.schedule step_decay is degenerate".into()));
            }
        }
        if let DataSource::Synth(spec) = &self.data.source {
            spec.validate().map_err(|e| Error::Config(format!("data.source.synth: {e}")))?;
        }
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "data.val_fraction must be in (0, 1), got {}",
                self.data.val_fraction
            )));
        }
        if self.data.batch_size == 0 {
            return Err(Error::Config("data.batch_size must be >= 1".into()));
        }
        if let (None, Some(_)) = (self.data.window_len, self.data.stride) {
            return Err(Error::Config("data.stride requires data.window_len".into()));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.train.log_every == 0 {
            return Err(Error::Config("train.log_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch statistics, also the JSON-lines log schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub lr: f64,
    pub train_loss: f32,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Everything needed to run (or resume) epochs over one prepared task.
pub struct Trainer {
    model: Model<f32>,
    optimizer: OptimizerState,
    hp: AdamParams,
    schedule: Schedule,
    clip_norm: Option<f64>,
    train_set: Dataset,
    val_set: Dataset,
    norm: NormStats,
    batch_size: usize,
    seed: u64,
    epochs_done: u64,
}

impl Trainer {
    /// Prepares the task and builds a fresh model: load/synthesize records,
    /// window, split, fit normalization on the training split only, apply it
    /// to both splits.
    pub fn new(config: &RunConfig) -> Result<Trainer> {
        config.validate()?;
        let (train_raw, val_raw) = prepare_splits(config)?;
        let norm = fit_norm(&train_raw);
        let model = Model::build(&config.model, config.train.seed)?;
        Self::assemble(config, model, None, norm, train_raw, val_raw, 0)
    }

    /// Continues training from a checkpoint: model, optimizer state,
    /// normalization statistics and epoch counter all come from the file.
    pub fn resume(config: &RunConfig, checkpoint_path: &Path) -> Result<Trainer> {
        config.validate()?;
        let loaded = load_checkpoint(checkpoint_path)?;
        if loaded.model.config() != &config.model {
            return Err(Error::Config(format!(
                "{}: checkpoint model config differs from the run config",
                checkpoint_path.display()
            )));
        }
        let norm = loaded.norm.ok_or_else(|| {
            Error::Config(format!(
                "{}: checkpoint carries no normalization statistics; cannot resume",
                checkpoint_path.display()
            ))
        })?;
        let epochs_done = loaded
            .meta
            .get("epochs_completed")
            .and_then(|s| s.parse::<u64>().ok())
            .unwrap_or(0);
        let (train_raw, val_raw) = prepare_splits(config)?;
        Self::assemble(
            config,
            loaded.model,
            loaded.optimizer,
            norm,
            train_raw,
            val_raw,
            epochs_done,
        )
    }

    fn assemble(
        config: &RunConfig,
        model: Model<f32>,
        optimizer: Option<OptimizerState>,
        norm: NormStats,
        train_raw: Dataset,
        val_raw: Dataset,
        epochs_done: u64,
    ) -> Result<Trainer> {
        if train_raw.channels() != config.model.in_channels {
            return Err(Error::Config(format!(
                "dataset has {} channels, model expects {}",
                train_raw.channels(),
                config.model.in_channels
            )));
        }
        let expects_multi = matches!(config.model.head, Head::MultiLabel);
        if train_raw.is_multi_label() != expects_multi {
            return Err(Error::Config(
                "dataset label kind does not match the configured head".into(),
            ));
        }
        if train_raw.num_classes != config.model.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes, model expects {}",
                train_raw.num_classes, config.model.num_classes
            )));
        }
        let train_set = apply_norm(&train_raw, &norm)?;
        let val_set = apply_norm(&val_raw, &norm)?;
        let optimizer = optimizer.unwrap_or_else(|| match config.optim.algorithm {
            Algorithm::Adam => OptimizerState::Adam(AdamState::new(model.params())),
            Algorithm::Sgd => OptimizerState::Sgd(SgdState::new(model.params())),
        });
        Ok(Trainer {
            model,
            optimizer,
            hp: AdamParams { weight_decay: config.optim.weight_decay, ..AdamParams::default() },
            schedule: Schedule { kind: config.optim.schedule, base_lr: config.optim.lr },
            clip_norm: config.optim.clip_norm,
            train_set,
            val_set,
            norm,
            batch_size: config.data.batch_size,
            seed: config.train.seed,
            epochs_done,
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn epochs_completed(&self) -> u64 {
        self.epochs_done
    }

    pub fn train_records(&self) -> usize {
        self.train_set.records.len()
    }

    pub fn val_records(&self) -> usize {
        self.val_set.records.len()
    }

    /// Runs one epoch of optimization followed by Eval-mode accuracy passes
    /// over both splits.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let epoch = self.epochs_done;
        let lr = self.schedule.lr_at(epoch);
        let batches = batch_iter(&self.train_set, self.batch_size, true, self.seed, epoch)?;
        let mut loss_sum = 0.0f64;
        let mut sample_count = 0usize;
        for batch in &batches {
            let loss = self.step(batch, lr)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch} after {sample_count} samples"
                )));
            }
            loss_sum += loss as f64 * batch.labels.len() as f64;
            sample_count += batch.labels.len();
        }
        let train_loss = (loss_sum / sample_count as f64) as f32;
        let train_acc = self.evaluate(&self.train_set)?;
        let val_acc = self.evaluate(&self.val_set)?;
        self.epochs_done += 1;
        Ok(EpochStats { epoch, lr, train_loss, train_acc, val_acc })
    }

    fn step(&mut self, batch: &Batch, lr: f64) -> Result<f32> {
        self.model.params_mut().zero_grads();
        let mut tape = Tape::new();
        let logits = self.model.forward(&batch.x, Mode::Train, &mut tape)?;
        let loss_node = match self.model.config().head {
            Head::MultiClass => {
                let labels = class_indices(&batch.labels)?;
                tape.softmax_cross_entropy(logits, &labels, None)?
            }
            Head::MultiLabel => {
                let targets = multi_label_targets(&batch.labels, self.model.config().num_classes)?;
                tape.sigmoid_bce(logits, &targets)?
            }
        };
        let loss = tape.value(loss_node).data()[0];
        tape.backward(loss_node, self.model.params_mut())?;
        if let Some(max_norm) = self.clip_norm {
            clip_global_norm(self.model.params_mut(), max_norm)?;
        }
        match &mut self.optimizer {
            OptimizerState::Adam(state) => {
                adam_step(self.model.params_mut(), state, lr, &self.hp)?
            }
            OptimizerState::Sgd(state) => {
                sgd_momentum_step(self.model.params_mut(), state, lr, 0.9)?;
                if self.hp.weight_decay > 0.0 {
                    let decay = (lr * self.hp.weight_decay) as f32;
                    for p in self.model.params_mut().iter_mut() {
                        for v in p.value.data_mut() {
                            *v -= decay * *v;
                        }
                    }
                }
            }
        }
        Ok(loss)
    }

    /// Eval-mode accuracy over a dataset (argmax for multi-class, elementwise
    /// 0.5-thresholded for multi-label).
    pub fn evaluate(&self, dataset: &Dataset) -> Result<f64> {
        evaluate_model(&self.model, dataset, self.batch_size)
    }

    /// Saves the model plus optimizer state, normalization statistics, and
    /// the epoch counter.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("epochs_completed".to_string(), self.epochs_done.to_string());
        save_checkpoint(&self.model, Some(&self.optimizer), Some(&self.norm), &meta, path)
    }
}

/// Loads or synthesizes the source records, windows them when configured,
/// and splits them; normalization statistics are never fitted here.
pub fn prepare_splits(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let dataset = match &config.data.source {
        DataSource::Path(path) => load_binary(path)?,
        DataSource::Synth(spec) => synth_generate(spec)?,
    };
    let dataset = match config.data.window_len {
        Some(window_len) => {
            let stride = config.data.stride.unwrap_or(window_len);
            let (windowed, skipped) = window_dataset(&dataset, window_len, stride)?;
            if skipped > 0 {
                log::warn!("{skipped} records were shorter than the window and were dropped");
            }
            windowed
        }
        None => dataset,
    };
    stratified_split(&dataset, config.data.val_fraction, config.train.seed)
}

/// Eval-mode accuracy of a model over a dataset.
pub fn evaluate_model(model: &Model<f32>, dataset: &Dataset, batch_size: usize) -> Result<f64> {
    let batches = batch_iter(dataset, batch_size, false, 0, 0)?;
    let mut correct = 0u64;
    let mut total = 0u64;
    for batch in &batches {
        let logits = model.infer(&batch.x)?;
        let (_, k) = logits.dims2()?;
        match model.config().head {
            Head::MultiClass => {
                for (i, label) in batch.labels.iter().enumerate() {
                    let Label::Class(truth) = label else {
                        return Err(Error::Schema("multi-label record in multi-class eval".into()));
                    };
                    let pred = argmax_class(&logits.data()[i * k..(i + 1) * k]);
                    if pred == *truth {
                        correct += 1;
                    }
                    total += 1;
                }
            }
            Head::MultiLabel => {
                for (i, label) in batch.labels.iter().enumerate() {
                    let Label::Multi(bits) = label else {
                        return Err(Error::Schema("multi-class record in multi-label eval".into()));
                    };
                    for (j, &bit) in bits.iter().enumerate() {
                        let pred = logits.data()[i * k + j] > 0.0;
                        if pred == (bit == 1) {
                            correct += 1;
                        }
                        total += 1;
                    }
                }
            }
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Per-row class probabilities: softmax rows for multi-class heads,
/// elementwise sigmoid for multi-label heads.
pub fn class_probabilities(logits: &Tensor<f32>, head: Head) -> Result<Vec<Vec<f32>>> {
    let (n, k) = logits.dims2()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let probs = match head {
            Head::MultiClass => {
                let max = row.iter().cloned().fold(f32::MIN, f32::max);
                let exps: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
                let denom: f32 = exps.iter().sum();
                exps.iter().map(|&e| e / denom).collect()
            }
            Head::MultiLabel => row.iter().map(|&z| crate::ops::sigmoid(z)).collect(),
        };
        out.push(probs);
    }
    Ok(out)
}

fn class_indices(labels: &[Label]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|l| match l {
            Label::Class(c) => Ok(*c),
            Label::Multi(_) => {
                Err(Error::Schema("multi-label record under a multi-class head".into()))
            }
        })
        .collect()
}

fn multi_label_targets(labels: &[Label], k: usize) -> Result<Tensor<f32>> {
    let n = labels.len();
    let mut data = Vec::with_capacity(n * k);
    for l in labels {
        match l {
            Label::Multi(bits) => data.extend(bits.iter().map(|&b| b as f32)),
            Label::Class(_) => {
                return Err(Error::Schema("multi-class record under a multi-label head".into()))
            }
        }
    }
    Tensor::from_vec(&[n, k], data)
}

/// Outcome of [`train_run`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochStats>,
    pub best_val: f64,
    pub log_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

/// Runs (or resumes) a full training job: per-epoch JSON-lines log, best-val
/// and final checkpoints. `echo` receives one line per `log_every` epochs.
pub fn train_run(
    config: &RunConfig,
    resume: Option<&Path>,
    mut echo: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(&config.train.checkpoint_dir)
        .map_err(|e| Error::io(&config.train.checkpoint_dir, e))?;
    let log_path = config.train.checkpoint_dir.join("train_log.jsonl");
    let final_checkpoint = config.train.checkpoint_dir.join("final.ddxc");
    let best_checkpoint = config.train.checkpoint_dir.join("best.ddxc");

    let mut trainer = match resume {
        Some(path) => Trainer::resume(config, path)?,
        None => Trainer::new(config)?,
    };
    let mut log = OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let mut epochs = Vec::new();
    let mut best_val = f64::MIN;
    while trainer.epochs_completed() < config.train.epochs {
        let stats = match trainer.run_epoch() {
            Ok(stats) => stats,
            Err(e) => {
                // Keep whatever checkpoints the previous epochs produced.
                return Err(e);
            }
        };
        let line = serde_json::to_string(&stats)
            .map_err(|e| Error::Internal(format!("log serialization: {e}")))?;
        log.write_all(line.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
        log.write_all(b"\n").map_err(|e| Error::io(&log_path, e))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        if let Some(echo) = echo.as_deref_mut() {
            if stats.epoch % config.train.log_every == 0
                || stats.epoch + 1 == config.train.epochs
            {
                let _ = writeln!(echo, "{line}");
            }
        }
        if stats.val_acc > best_val {
            best_val = stats.val_acc;
            trainer.save(&best_checkpoint)?;
        }
        trainer.save(&final_checkpoint)?;
        epochs.push(stats);
    }
    Ok(TrainOutcome { epochs, best_val, log_path, final_checkpoint, best_checkpoint })
}
