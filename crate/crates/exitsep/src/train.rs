//! The training loop.
//!
//! One epoch visits every training scene once in a seeded random order, one
//! randomly placed chunk per scene, `batch` chunks per optimizer step.
//! Validation runs after every epoch on a fixed set of chunks.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use exitsep_core::loss::chunk_loss;
use exitsep_core::metrics::mask_mse;
use exitsep_core::optim::{adamw_step, clip_grad_norm, lr_at, AdamWConfig, OptimState, Schedule};
use exitsep_core::{run_early_exit, ExitPolicy, Graph, MaskStack, NoClock, ParamSet, Separator};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, TrainState};
use crate::config::ExperimentConfig;
use crate::dataset::PreparedScene;
use crate::error::{Error, Result};

pub const TRAIN_LOG: &str = "train_log.csv";
pub const VALID_LOG: &str = "valid_log.csv";
pub const BEST: &str = "best.ckpt";
pub const LAST: &str = "last.ckpt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub batch: usize,
    pub chunk_frames: usize,
    pub schedule: Schedule,
    pub adamw: AdamWConfig,
    pub clip_norm: f64,
    pub valid_chunks_per_scene: usize,
    pub seed: u64,
}

impl From<&ExperimentConfig> for TrainOptions {
    fn from(c: &ExperimentConfig) -> Self {
        TrainOptions {
            batch: c.train.batch,
            chunk_frames: c.train.chunk_frames,
            schedule: c.train.schedule(),
            adamw: c.train.adamw(),
            clip_norm: c.train.clip_norm,
            valid_chunks_per_scene: c.train.valid_chunks_per_scene,
            seed: c.seed,
        }
    }
}

/// Validation result after an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidRecord {
    pub epoch: u64,
    pub step: u64,
    /// Permutation-free mask MSE of the last layer.
    pub final_mse: f64,
    /// The same for a predictor that outputs 0.5 everywhere.
    pub constant_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub valid: Vec<ValidRecord>,
    pub checkpoint: Checkpoint,
}

/// `per_scene` chunks per validation scene, evenly spread.
pub fn validation_chunks(scenes: &[PreparedScene], chunk: usize, per_scene: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        let len = chunk.min(s.frames);
        let span = s.frames - len;
        for k in 0..per_scene {
            let start = if per_scene == 1 { span / 2 } else { span * k / (per_scene - 1) };
            out.push((i, start, len));
        }
    }
    out
}

/// Last-layer and constant-predictor MSE over the given chunks.
pub fn validate(model: &Separator, params: &ParamSet, scenes: &[PreparedScene], chunks: &[(usize, usize, usize)]) -> Result<(f64, f64)> {
    if chunks.is_empty() {
        return Err(Error::Usage("validation set is empty".into()));
    }
    let (mut sum, mut constant) = (0.0, 0.0);
    for &(i, start, len) in chunks {
        let s = &scenes[i];
        let x = s.features(start, len)?;
        let target = s.target.slice_frames(start, len);
        let (masks, _) = run_early_exit(model, params, &x, &ExitPolicy::full_depth(), &NoClock, 0)?;
        sum += mask_mse(&masks, &target, true)?;
        let half = MaskStack::filled(len, target.bins, target.streams, 0.5);
        constant += mask_mse(&half, &target, true)?;
    }
    let n = chunks.len() as f64;
    Ok((sum / n, constant / n))
}

fn epoch_plan(n: usize, frames: impl Fn(usize) -> usize, chunk: usize, seed: u64, epoch: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0xA076_1D64_78BD_642F));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .map(|i| {
            let span = frames(i).saturating_sub(chunk);
            (i, rng.random_range(0..=span))
        })
        .collect()
}

struct Logs {
    train: csv::Writer<fs::File>,
    valid: csv::Writer<fs::File>,
    dir: PathBuf,
}

fn open_log(path: &Path, header: &[String], append: bool) -> Result<csv::Writer<fs::File>> {
    let exists = append && path.exists();
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(exists)
        .truncate(!exists)
        .open(path)
        .map_err(Error::io(path))?;
    let mut w = csv::Writer::from_writer(f);
    if !exists {
        w.write_record(header).map_err(|e| Error::format(path, e.to_string()))?;
        w.flush().map_err(Error::io(path))?;
    }
    Ok(w)
}

impl Logs {
    fn open(dir: &Path, layers: usize, append: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let mut header: Vec<String> = vec!["step".into(), "lr".into()];
        header.extend((1..=layers).map(|i| format!("L{i}")));
        header.push("weighted".into());
        let train = open_log(&dir.join(TRAIN_LOG), &header, append)?;
        let vh: Vec<String> = ["epoch", "step", "final_mse", "constant_mse"].map(String::from).to_vec();
        let valid = open_log(&dir.join(VALID_LOG), &vh, append)?;
        Ok(Logs { train, valid, dir: dir.to_path_buf() })
    }

    fn row(w: &mut csv::Writer<fs::File>, path: PathBuf, fields: Vec<String>) -> Result<()> {
        w.write_record(&fields).map_err(|e| Error::format(&path, e.to_string()))?;
        w.flush().map_err(Error::io(&path))
    }
}

/// Trains from `start` (fresh or resumed) until `schedule.total_steps`
/// updates have been made in total.
///
/// With `out = Some(dir)` the per-step and validation logs are written there
/// together with `best.ckpt` (best validation MSE) and `last.ckpt`. A
/// non-finite loss aborts with [`Error::Numeric`] and leaves the last good
/// checkpoint in place.
pub fn train(opts: &TrainOptions, start: Checkpoint, train_set: &[PreparedScene], valid_set: &[PreparedScene], out: Option<&Path>) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let model = start.model()?;
    let config = start.config;
    let mut params = start.params;
    let (mut optim, mut best) = match start.train {
        Some(t) => (t.optim, t.best_valid),
        None => (OptimState::new(&params), None),
    };
    let resumed = optim.step > 0;
    let mut logs = match out {
        Some(dir) => Some(Logs::open(dir, config.layers, resumed)?),
        None => None,
    };
    let chunks = validation_chunks(valid_set, opts.chunk_frames, opts.valid_chunks_per_scene);
    let steps_per_epoch = train_set.len().div_ceil(opts.batch) as u64;
    let mut records = Vec::new();
    let layers = config.layers;

    while optim.step < opts.schedule.total_steps {
        let epoch = optim.step / steps_per_epoch;
        let plan = epoch_plan(train_set.len(), |i| train_set[i].frames, opts.chunk_frames, opts.seed, epoch);
        let first = (optim.step % steps_per_epoch) as usize;
        for batch in plan.chunks(opts.batch).skip(first) {
            if optim.step >= opts.schedule.total_steps {
                break;
            }
            params.zero_grad();
            let mut per_layer = vec![0.0; layers];
            let mut total = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &(i, s) in batch {
                let scene = &train_set[i];
                let len = opts.chunk_frames.min(scene.frames);
                let x = scene.features(s, len)?;
                let target = scene.target.slice_frames(s, len);
                let grads = {
                    let mut g = Graph::new(&params);
                    let (loss, report) = chunk_loss(&mut g, &model, &x, &target)?;
                    if !report.total.is_finite() {
                        return Err(Error::Numeric(format!("loss {} at step {}", report.total, optim.step + 1)));
                    }
                    for (a, b) in per_layer.iter_mut().zip(&report.per_layer) {
                        *a += b * scale;
                    }
                    total += report.total * scale;
                    g.backward(loss)?.param_grads()
                };
                params.accumulate(&grads, scale);
            }
            let norm = clip_grad_norm(&mut params, opts.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Numeric(format!("gradient norm {norm} at step {}", optim.step + 1)));
            }
            let lr = lr_at(optim.step + 1, &opts.schedule);
            adamw_step(&mut params, &mut optim, lr, &opts.adamw);
            if let Some(l) = logs.as_mut() {
                let mut row = vec![optim.step.to_string(), lr.to_string()];
                row.extend(per_layer.iter().map(f64::to_string));
                row.push(total.to_string());
                Logs::row(&mut l.train, l.dir.join(TRAIN_LOG), row)?;
            }
        }
        let end_of_epoch = optim.step % steps_per_epoch == 0 || optim.step >= opts.schedule.total_steps;
        if end_of_epoch && !chunks.is_empty() {
            let (final_mse, constant_mse) = validate(&model, &params, valid_set, &chunks)?;
            if !final_mse.is_finite() {
                return Err(Error::Numeric(format!("validation MSE {final_mse} at step {}", optim.step)));
            }
            let rec = ValidRecord { epoch: optim.step.div_ceil(steps_per_epoch), step: optim.step, final_mse, constant_mse };
            records.push(rec);
            let improved = best.is_none_or(|b| final_mse < b);
            if improved {
                best = Some(final_mse);
            }
            if let Some(l) = logs.as_mut() {
                let row = vec![rec.epoch.to_string(), rec.step.to_string(), final_mse.to_string(), constant_mse.to_string()];
                Logs::row(&mut l.valid, l.dir.join(VALID_LOG), row)?;
                if improved {
                    snapshot(config, &params, &optim, best).save(&l.dir.join(BEST))?;
                }
            }
        }
    }
    let checkpoint = snapshot(config, &params, &optim, best);
    if let Some(l) = logs.as_ref() {
        checkpoint.save(&l.dir.join(LAST))?;
    }
    Ok(TrainOutcome { valid: records, checkpoint })
}

fn snapshot(config: exitsep_core::ModelConfig, params: &ParamSet, optim: &OptimState, best: Option<f64>) -> Checkpoint {
    let mut params = params.clone();
    params.zero_grad();
    Checkpoint {
        config,
        params,
        train: Some(TrainState { optim: optim.clone(), best_valid: best }),
    }
}

/// A fresh checkpoint for `config` with seeded initial weights.
pub fn initial_checkpoint(config: exitsep_core::ModelConfig, seed: u64) -> Result<Checkpoint> {
    let (_, params) = Separator::init(config, seed)?;
    Ok(Checkpoint { config, params, train: None })
}
