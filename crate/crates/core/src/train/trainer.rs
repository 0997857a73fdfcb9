//! The training loop.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, TrainConfig};
use super::metrics::{read_metrics, EpochRecord, MetricsWriter};
use crate::autograd::Tape;
use crate::checkpoint::{self, Checkpoint};
use crate::data::{
    assemble_batch, batch_plan, list_dir_pairs, load_pairs, read_manifest, resize_pair, split_dataset,
    synthetic_circles, DatasetSplit, SamplePair,
};
use crate::error::{Error, Result};
use crate::loss::{binarize, dice_coefficient, DiceMode};
use crate::nn::Mode;
use crate::optim::{adam_step, is_optimizer_tensor, AdamState};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::unet::UNetModel;

pub const CONFIG_FILE: &str = "config.resolved.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";

pub fn epoch_checkpoint_name(epochs_completed: usize) -> String {
    format!("epoch_{epochs_completed:04}.ckpt")
}

/// Training state stored in a checkpoint's `meta` field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_completed: usize,
    pub adam_t: u64,
    pub image_size: usize,
    pub threshold: f64,
    pub best_val_dice: Option<f64>,
    pub best_epoch: Option<usize>,
    pub train_config: TrainConfig,
}

impl TrainMeta {
    pub fn from_checkpoint<F: Real>(ckpt: &Checkpoint<F>) -> Result<Self> {
        serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::Format(format!("checkpoint has no training state: {e}")))
    }
}

#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub metrics_csv: PathBuf,
    pub resolved_config: PathBuf,
    /// Rows written by this invocation.
    pub records: Vec<EpochRecord>,
}

fn load_source(src: &DataSource, threshold: f64) -> Result<Vec<SamplePair>> {
    match src {
        DataSource::Dir(root) => load_pairs(&list_dir_pairs(root)?, threshold),
        DataSource::Manifest(path) => load_pairs(&read_manifest(path)?, threshold),
        DataSource::Synthetic(c) => synthetic_circles(c),
    }
}

fn resize_all(samples: Vec<SamplePair>, size: usize) -> Result<Vec<SamplePair>> {
    par::map_indexed(samples.len(), |i| resize_pair(&samples[i], size))
        .into_iter()
        .collect()
}

/// Loads, splits and resizes the data described by `cfg`.
pub fn load_split(cfg: &TrainConfig) -> Result<DatasetSplit> {
    let train_src = cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("data.train is required".into()))?;
    let thr = cfg.data.mask_threshold;
    let train = load_source(train_src, thr)?;
    let split = match &cfg.data.val {
        Some(v) => DatasetSplit {
            train,
            val: load_source(v, thr)?,
            split_seed: cfg.seeds.split,
        },
        None => split_dataset(train, cfg.data.val_fraction, cfg.seeds.split)?,
    };
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(DatasetSplit {
        train: resize_all(split.train, cfg.image_size)?,
        val: resize_all(split.val, cfg.image_size)?,
        split_seed: split.split_seed,
    })
}

/// Trains from the config's data sources, optionally resuming from a
/// checkpoint written by an earlier run with the same config.
pub fn train(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let split = load_split(cfg)?;
    train_on(cfg, &split, resume)
}

struct RunState {
    model: UNetModel<f32>,
    adam: AdamState<f32>,
    start_epoch: usize,
    best: Option<(f64, usize)>,
}

fn initial_state(cfg: &TrainConfig, resume: Option<&Path>) -> Result<RunState> {
    let Some(path) = resume else {
        return Ok(RunState {
            model: UNetModel::build(cfg.model.clone(), cfg.seeds.weights)?,
            adam: AdamState::new(cfg.optimizer.adam()),
            start_epoch: 0,
            best: None,
        });
    };
    let ckpt = checkpoint::read::<f32>(path)?;
    let meta = TrainMeta::from_checkpoint(&ckpt)?;
    if ckpt.config != cfg.model {
        return Err(Error::InvalidConfig(format!(
            "checkpoint model {:?} differs from configured model {:?}",
            ckpt.config, cfg.model
        )));
    }
    if meta.epochs_completed > cfg.epochs {
        return Err(Error::InvalidConfig(format!(
            "checkpoint has {} epochs but the run is configured for {}",
            meta.epochs_completed, cfg.epochs
        )));
    }
    let weights: BTreeMap<String, Tensor<f32>> = ckpt
        .tensors
        .iter()
        .filter(|(k, _)| !is_optimizer_tensor(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(RunState {
        model: UNetModel::from_tensors(cfg.model.clone(), &weights)?,
        adam: AdamState::from_tensors(cfg.optimizer.adam(), meta.adam_t, &ckpt.tensors),
        start_epoch: meta.epochs_completed,
        best: meta.best_val_dice.zip(meta.best_epoch),
    })
}

fn save_state(cfg: &TrainConfig, state: &RunState, epochs_completed: usize, path: &Path) -> Result<()> {
    let mut tensors = state.model.params().clone();
    tensors.extend(state.adam.to_tensors());
    let meta = TrainMeta {
        epochs_completed,
        adam_t: state.adam.t,
        image_size: cfg.image_size,
        threshold: cfg.threshold,
        best_val_dice: state.best.map(|b| b.0),
        best_epoch: state.best.map(|b| b.1),
        train_config: cfg.clone(),
    };
    checkpoint::write(
        path,
        &Checkpoint {
            config: cfg.model.clone(),
            tensors,
            meta: serde_json::to_value(meta).expect("meta serializes"),
        },
    )
}

/// Trains on an already loaded and resized split.
pub fn train_on(cfg: &TrainConfig, split: &DatasetSplit, resume: Option<&Path>) -> Result<TrainArtifacts> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dir = &cfg.checkpoint_dir;
    std::fs::create_dir_all(dir)?;
    let resolved_config = dir.join(CONFIG_FILE);
    checkpoint::write_atomic(&resolved_config, cfg.to_json().as_bytes())?;

    let mut state = initial_state(cfg, resume)?;
    let metrics_csv = dir.join(METRICS_FILE);
    let mut writer = if resume.is_some() && metrics_csv.is_file() {
        let kept: Vec<EpochRecord> = read_metrics(&metrics_csv)?
            .into_iter()
            .filter(|r| r.epoch < state.start_epoch)
            .collect();
        MetricsWriter::rewrite(&metrics_csv, &kept)?
    } else {
        MetricsWriter::create(&metrics_csv)?
    };

    let last = dir.join(LAST_CKPT);
    let best_path = dir.join(BEST_CKPT);
    if state.start_epoch == cfg.epochs {
        save_state(cfg, &state, state.start_epoch, &last)?;
    }
    let schedule = cfg.schedule();
    let policy = cfg.augment_policy();
    let mut records = Vec::new();
    for epoch in state.start_epoch..cfg.epochs {
        let clock = Instant::now();
        let lr = schedule.lr_at_epoch(epoch)?;
        let plan = batch_plan(split.train.len(), cfg.batch_size, cfg.seeds.shuffle, epoch)?;

        let train_loss = std::thread::scope(|s| -> Result<f64> {
            // the next batches are assembled while the current one trains
            let (tx, rx) = mpsc::sync_channel(2);
            let plan = &plan;
            let policy = policy.as_ref();
            s.spawn(move || {
                for idx in plan {
                    if tx.send(assemble_batch(&split.train, idx, policy, epoch)).is_err() {
                        break;
                    }
                }
            });
            let mut total = 0.0;
            for batch in rx {
                let batch = batch?;
                let loss = train_step(cfg, &mut state, &batch.images, &batch.masks, lr, epoch)?;
                total += loss * batch.len() as f64;
            }
            Ok(total / split.train.len() as f64)
        })?;

        let v = validate(cfg, &state.model, &split.val)?;
        if !v.loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: v.loss,
            val_dice_mean: match cfg.dice_mode {
                DiceMode::Standard => v.dice_standard,
                DiceMode::PaperLiteral => v.dice_literal,
            },
            lr,
            wall_seconds: clock.elapsed().as_secs_f64(),
        };
        writer.append(&record)?;
        records.push(record);
        log::info!(
            "epoch {epoch}: train_loss={train_loss:.5} val_loss={:.5} val_dice={:.4} lr={lr}",
            v.loss,
            record.val_dice_mean
        );

        let improved = state.best.is_none_or(|(b, _)| v.dice_standard > b);
        if improved {
            state.best = Some((v.dice_standard, epoch));
        }
        let done = epoch + 1;
        save_state(cfg, &state, done, &last)?;
        if improved {
            save_state(cfg, &state, done, &best_path)?;
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            save_state(cfg, &state, done, &dir.join(epoch_checkpoint_name(done)))?;
        }
    }
    Ok(TrainArtifacts {
        last_checkpoint: last,
        best_checkpoint: best_path.is_file().then_some(best_path),
        metrics_csv: writer.path().to_path_buf(),
        resolved_config,
        records,
    })
}

fn train_step(
    cfg: &TrainConfig,
    state: &mut RunState,
    images: &Tensor<f32>,
    masks: &Tensor<f32>,
    lr: f32,
    epoch: usize,
) -> Result<f64> {
    let tape = Tape::new();
    let x = tape.constant(images.clone());
    let pass = state.model.forward(&tape, x, Mode::Train)?;
    let loss = cfg.loss.apply(pass.output, masks)?;
    let value = loss.value().item()?.as_f64();
    if !value.is_finite() {
        return Err(Error::DivergedLoss { epoch });
    }
    let mut grads = tape.backward(loss)?;
    let named = pass.named_grads(&mut grads);
    match adam_step(state.model.params_mut(), &named, &mut state.adam, lr as f64) {
        Err(Error::NonFiniteGradient(_)) => Err(Error::DivergedLoss { epoch }),
        other => other.map(|_| value),
    }
}

/// Validation loss and mean Dice of thresholded predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationResult {
    pub loss: f64,
    pub dice_standard: f64,
    pub dice_literal: f64,
}

/// Eval-mode pass over `val` in fixed order; the model is not modified.
pub fn validate(cfg: &TrainConfig, model: &UNetModel<f32>, val: &[SamplePair]) -> Result<ValidationResult> {
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut loss, mut std_sum, mut lit_sum) = (0.0, 0.0, 0.0);
    let idx: Vec<usize> = (0..val.len()).collect();
    for chunk in idx.chunks(cfg.batch_size) {
        let batch = assemble_batch(val, chunk, None, 0)?;
        let probs = model.predict(&batch.images)?;
        let tape = Tape::new();
        let l = cfg.loss.apply(tape.constant(probs.clone()), &batch.masks)?;
        loss += l.value().item()?.as_f64() * chunk.len() as f64;
        for i in 0..chunk.len() {
            let pred = binarize(probs.sample(i), cfg.threshold);
            let truth = batch.masks.sample(i);
            std_sum += dice_coefficient(&pred, truth, DiceMode::Standard)?;
            lit_sum += dice_coefficient(&pred, truth, DiceMode::PaperLiteral)?;
        }
    }
    let n = val.len() as f64;
    Ok(ValidationResult {
        loss: loss / n,
        dice_standard: std_sum / n,
        dice_literal: lit_sum / n,
    })
}
