//! AdamW training with per-epoch frame resampling and resumable checkpoints.
//!
//! Every random draw is keyed by `(seed, epoch, clip)`, and per-sample
//! gradients are summed in batch order, so a run is bitwise reproducible
//! for any thread count and across checkpoint/resume.

mod log;
mod optim;

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use self::log::{EpochRow, TrainLog, LOG_HEADER};
pub(crate) use self::log::csv_err;
pub use optim::AdamW;

use crate::data::{Dataset, PreprocessConfig, SamplerConfig, Split};
use crate::diffcore::{Checkpoint, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::harness::{evaluate, rank_correlation, EvalConfig};
use crate::model::{ForwardCtx, Model, ModelConfig};
use crate::ranking::{mse_spearman_loss, LossConfig};
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub preprocess: PreprocessConfig,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables the schedule.
    pub checkpoint_every: usize,
    /// Maximum global L2 norm of the gradient.
    pub grad_clip: Option<f64>,
    /// Linear learning-rate warmup length; 0 disables it.
    pub warmup_epochs: usize,
    /// Reuse each clip's first frame plan and crop in every epoch.
    pub freeze_plans: bool,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full_scale_transformer()
    }
}

impl TrainConfig {
    /// Transformer-variant regime: lr 1e-5, weight decay 1e-5, batch 4.
    pub fn full_scale_transformer() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            learning_rate: 1e-5,
            weight_decay: 1e-5,
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            preprocess: PreprocessConfig::default(),
            seed: 0,
            checkpoint_every: 50,
            grad_clip: None,
            warmup_epochs: 0,
            freeze_plans: false,
            threads: 0,
        }
    }

    /// Convolutional-variant regime: lr 5e-5, weight decay 1e-2, batch 16.
    pub fn full_scale_conv() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 5e-5,
            weight_decay: 1e-2,
            ..Self::full_scale_transformer()
        }
    }

    /// Settings for the tiny models on 32x32 synthetic clips.
    pub fn toy() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 2e-3,
            weight_decay: 1e-5,
            preprocess: PreprocessConfig {
                short_side: 32,
                crop: 32,
                ..PreprocessConfig::default()
            },
            checkpoint_every: 0,
            ..Self::full_scale_transformer()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.preprocess.validate()?;
        if self.batch_size == 0 || (self.loss.beta > 0.0 && self.batch_size < 2) {
            return Err(Error::Config(format!(
                "train.batch_size {} too small: Spearman weight beta > 0 needs at least 2 clips per batch",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("train.learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("train.weight_decay {} must be >= 0", self.weight_decay)));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("train.grad_clip must be positive".into()));
        }
        if self.sampler.n_frames == 0 {
            return Err(Error::Config("train.sampler.n_frames must be positive".into()));
        }
        Ok(())
    }

    /// Checks that clips produced by this config fit `model`.
    pub fn check_model(&self, model: &ModelConfig) -> Result<()> {
        if self.sampler.n_frames != model.frames {
            return Err(Error::Config(format!(
                "train.sampler.n_frames {} differs from model.frames {}",
                self.sampler.n_frames, model.frames
            )));
        }
        if !model.variant.is_conv() && self.preprocess.crop as usize != model.image_size {
            return Err(Error::Config(format!(
                "train.preprocess.crop {} differs from model.image_size {}",
                self.preprocess.crop, model.image_size
            )));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.warmup_epochs > 0 && epoch <= self.warmup_epochs {
            self.learning_rate * epoch as f64 / self.warmup_epochs as f64
        } else {
            self.learning_rate
        }
    }
}

/// Everything needed to continue a run: weights, optimizer moments and history.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: AdamW,
    pub epochs_done: usize,
    pub log: TrainLog,
    pub best_eval: Option<f64>,
}

const LOG_TENSOR: &str = "train.log";

impl TrainState {
    pub fn new(model: Model) -> Self {
        let optimizer = AdamW::new(model.params());
        Self {
            model,
            optimizer,
            epochs_done: 0,
            log: TrainLog::default(),
            best_eval: None,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = self.model.to_checkpoint();
        let params = self.model.params();
        for ((_, e), (m, v)) in params.iter().zip(self.optimizer.m.iter().zip(&self.optimizer.v)) {
            c.push(format!("adam.m/{}", e.path), &e.shape, m.clone());
            c.push(format!("adam.v/{}", e.path), &e.shape, v.clone());
        }
        if !self.log.rows.is_empty() {
            let flat = self
                .log
                .rows
                .iter()
                .flat_map(|r| [r.epoch as f64, r.train_loss, r.train_spearman, r.eval_spearman, r.wall_time_s])
                .collect();
            c.push(LOG_TENSOR, &[self.log.rows.len(), 5], flat);
        }
        c.meta.insert("epochs_done".into(), self.epochs_done.to_string());
        c.meta.insert("adam_step".into(), self.optimizer.step.to_string());
        if let Some(b) = self.best_eval {
            c.meta.insert("best_eval_bits".into(), b.to_bits().to_string());
        }
        c
    }

    /// Writes the checkpoint and the model config sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_checkpoint().save(path)?;
        let json = serde_json::to_string_pretty(self.model.config()).expect("config serializes");
        std::fs::write(Model::sidecar_path(path), json + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let model = Model::load(path)?;
        let c = Checkpoint::load(path)?;
        let parse = |k: &str| -> Result<u64> {
            c.meta(k)?
                .parse()
                .map_err(|e| Error::Checkpoint(format!("meta {k}: {e}")))
        };
        let mut optimizer = AdamW::new(model.params());
        optimizer.step = parse("adam_step")?;
        for (k, (_, e)) in model.params().iter().enumerate() {
            for (prefix, dst) in [("adam.m", &mut optimizer.m[k]), ("adam.v", &mut optimizer.v[k])] {
                let t = c
                    .get(&format!("{prefix}/{}", e.path))
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for {}", e.path)))?;
                if t.values.len() != dst.len() {
                    return Err(Error::Checkpoint(format!("optimizer state for {} has wrong size", e.path)));
                }
                dst.copy_from_slice(&t.values);
            }
        }
        let rows = c
            .get(LOG_TENSOR)
            .map(|t| {
                t.values
                    .chunks_exact(5)
                    .map(|r| EpochRow {
                        epoch: r[0] as usize,
                        train_loss: r[1],
                        train_spearman: r[2],
                        eval_spearman: r[3],
                        wall_time_s: r[4],
                    })
                    .collect()
            })
            .unwrap_or_default();
        let best_eval = c
            .meta
            .contains_key("best_eval_bits")
            .then(|| parse("best_eval_bits").map(f64::from_bits))
            .transpose()?;
        Ok(Self {
            model,
            optimizer,
            epochs_done: parse("epochs_done")? as usize,
            log: TrainLog { rows },
            best_eval,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where scheduled, best and last checkpoints go; none are written if unset.
    pub checkpoint_dir: Option<PathBuf>,
}

/// Trains `model` for `cfg.epochs` epochs from scratch.
pub fn train(model: Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    let state = train_from(TrainState::new(model), dataset, cfg, &TrainOptions::default())?;
    Ok((state.model, state.log))
}

/// One sample's randomness, derived from the run seed.
struct Job {
    record: usize,
    plan_seed: u64,
    augment_seed: u64,
    dropout_seed: u64,
}

impl Job {
    fn new(cfg: &TrainConfig, epoch: usize, record: usize) -> Self {
        let r = record as u64;
        let key = |s: u64| {
            if cfg.freeze_plans {
                seed::derive(cfg.seed, &[s, r])
            } else {
                seed::derive(cfg.seed, &[s, epoch as u64, r])
            }
        };
        Self {
            record,
            plan_seed: seed::derive(cfg.sampler.rng_seed, &[key(stream::PLAN)]),
            augment_seed: key(stream::AUGMENT),
            dropout_seed: seed::derive(cfg.seed, &[stream::DROPOUT, epoch as u64, r]),
        }
    }
}

struct BatchResult {
    loss: f64,
    preds: Vec<[f64; 2]>,
    grads: Vec<Vec<f64>>,
}

/// Forward pass for one job on its own graph; returns the `[1, 2]` output.
fn forward_job(model: &Model, bound: &crate::diffcore::Bound, data: &Dataset, cfg: &TrainConfig, job: &Job) -> Result<Tensor> {
    let sampler = SamplerConfig {
        rng_seed: job.plan_seed,
        ..cfg.sampler
    };
    let clip = data.clip_tensor(job.record, &sampler, &cfg.preprocess, job.augment_seed)?;
    model.forward(bound, &clip, &mut ForwardCtx::train(job.dropout_seed))
}

/// Loss and parameter gradients for one batch.
///
/// Workers build one graph per sample and report predictions; the batch
/// loss (which couples samples through the rank term) is differentiated
/// with respect to the predictions, and each worker then back-propagates
/// its rows of that gradient through its own graphs.
fn run_batch(model: &Model, data: &Dataset, cfg: &TrainConfig, jobs: &[Job], threads: usize) -> Result<BatchResult> {
    let ranges = crate::par::chunks(jobs.len(), threads);
    let (pred_tx, pred_rx) = mpsc::channel::<(usize, Result<Vec<[f64; 2]>>)>();
    type Grads = Vec<Vec<Vec<f64>>>;

    std::thread::scope(|s| -> Result<BatchResult> {
        let mut seed_txs = Vec::new();
        let mut handles = Vec::new();
        for (ci, range) in ranges.iter().cloned().enumerate() {
            let (seed_tx, seed_rx) = mpsc::channel::<Vec<[f64; 2]>>();
            seed_txs.push(seed_tx);
            let pred_tx = pred_tx.clone();
            let chunk = &jobs[range];
            handles.push(s.spawn(move || -> Result<Grads> {
                let bound = model.params().bind();
                let outs: Result<Vec<Tensor>> = chunk.iter().map(|j| forward_job(model, &bound, data, cfg, j)).collect();
                let outs = match outs {
                    Ok(o) => o,
                    Err(e) => {
                        let _ = pred_tx.send((ci, Err(e)));
                        return Ok(Vec::new());
                    }
                };
                let preds = outs.iter().map(|o| [o.data()[0], o.data()[1]]).collect();
                let _ = pred_tx.send((ci, Ok(preds)));
                drop(pred_tx);
                let Ok(seeds) = seed_rx.recv() else {
                    return Ok(Vec::new());
                };
                let mut grads = Vec::with_capacity(outs.len());
                for (out, seed) in outs.iter().zip(seeds) {
                    bound.zero_grads();
                    out.backward_with(seed.to_vec())?;
                    grads.push(bound.grads());
                }
                Ok(grads)
            }));
        }
        drop(pred_tx);

        let mut per_chunk: Vec<Option<Vec<[f64; 2]>>> = vec![None; ranges.len()];
        let mut failure = None;
        // one message per chunk; a closed channel means a worker panicked
        for (ci, r) in pred_rx.iter().take(ranges.len()) {
            match r {
                Ok(p) => per_chunk[ci] = Some(p),
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        if failure.is_none() && per_chunk.iter().any(Option::is_none) {
            failure = Some(Error::op("train", "a worker thread exited early"));
        }
        let preds: Vec<[f64; 2]> = match failure {
            None => per_chunk.into_iter().flatten().flatten().collect(),
            Some(e) => {
                drop(seed_txs);
                for h in handles {
                    let _ = h.join();
                }
                return Err(e);
            }
        };

        let targets: Vec<[f64; 2]> = jobs.iter().map(|j| data.records[j.record].target()).collect();
        let y_hat = Tensor::param(preds.iter().flatten().copied().collect(), &[preds.len(), 2])?;
        let loss = mse_spearman_loss(&targets, &y_hat, &cfg.loss)?;
        loss.backward()?;
        let g = y_hat.grad().expect("loss depends on predictions");
        for (tx, range) in seed_txs.iter().zip(&ranges) {
            let rows = g[2 * range.start..2 * range.end].chunks_exact(2).map(|r| [r[0], r[1]]).collect();
            let _ = tx.send(rows);
        }

        let mut total: Option<Vec<Vec<f64>>> = None;
        for h in handles {
            let chunk_grads = h.join().unwrap_or_else(|p| std::panic::resume_unwind(p))?;
            for sample in chunk_grads {
                match &mut total {
                    None => total = Some(sample),
                    Some(t) => t
                        .iter_mut()
                        .zip(sample)
                        .for_each(|(a, b)| a.iter_mut().zip(b).for_each(|(x, y)| *x += y)),
                }
            }
        }
        Ok(BatchResult {
            loss: loss.item()?,
            preds,
            grads: total.expect("batch is non-empty"),
        })
    })
}

fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

fn check_finite(params: &ParamStore) -> Result<()> {
    for (_, e) in params.iter() {
        if let Some(i) = e.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {}[{i}]", e.path)));
        }
    }
    Ok(())
}

/// Continues `state` until `cfg.epochs` epochs are done.
///
/// `eval_spearman` is logged as 0 when the predictions are constant and as
/// NaN when the test split has fewer than 2 clips.
pub fn train_from(mut state: TrainState, dataset: &Dataset, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainState> {
    cfg.validate()?;
    cfg.check_model(state.model.config())?;
    let train_idx = dataset.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if cfg.loss.beta > 0.0 && train_idx.len() < 2 {
        return Err(Error::invalid("Spearman loss needs at least 2 training clips"));
    }
    let threads = crate::par::resolve_threads(cfg.threads);
    let eval_cfg = EvalConfig::from_train(cfg);
    let can_eval = dataset.indices(eval_cfg.split).len() >= 2;
    let started = Instant::now();

    for epoch in (state.epochs_done + 1)..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut seed::rng(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        let lr = cfg.lr_at(epoch);

        let mut losses = Vec::new();
        let mut truth = Vec::new();
        let mut predicted = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            if cfg.loss.beta > 0.0 && batch.len() < 2 {
                continue;
            }
            let jobs: Vec<Job> = batch.iter().map(|&r| Job::new(cfg, epoch, r)).collect();
            let mut res = run_batch(&state.model, dataset, cfg, &jobs, threads)?;
            if !res.loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            if let Some(c) = cfg.grad_clip {
                clip_gradients(&mut res.grads, c);
            }
            state
                .optimizer
                .step(state.model.params_mut(), &res.grads, lr, cfg.weight_decay)?;
            losses.push(res.loss);
            for (job, p) in jobs.iter().zip(&res.preds) {
                truth.push(dataset.records[job.record].final_score);
                predicted.push(crate::data::final_score(p[0].clamp(0.0, 1.0), p[1]));
            }
        }
        check_finite(state.model.params())?;

        let train_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        let train_spearman = rank_correlation(&truth, &predicted).unwrap_or(0.0);
        let eval_spearman = if can_eval {
            match evaluate(&state.model, dataset, &eval_cfg) {
                Ok(r) => r,
                Err(Error::UndefinedCorrelation(_)) => 0.0,
                Err(e) => return Err(e),
            }
        } else {
            f64::NAN
        };
        let row = EpochRow {
            epoch,
            train_loss,
            train_spearman,
            eval_spearman,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        ::log::info!(
            "epoch {epoch}/{}: loss {train_loss:.5} train rho {train_spearman:.4} eval rho {eval_spearman:.4}",
            cfg.epochs
        );
        state.log.rows.push(row);
        state.epochs_done = epoch;

        let improved = state.best_eval.is_none_or(|b| eval_spearman > b);
        if improved {
            state.best_eval = Some(eval_spearman);
        }
        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                state.save(dir.join(format!("epoch_{epoch:04}.ckpt")))?;
            }
            if improved {
                state.save(dir.join("best.ckpt"))?;
            }
            state.save(dir.join("last.ckpt"))?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_transformer_regime() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.learning_rate, c.weight_decay, c.batch_size), (200, 1e-5, 1e-5, 4));
        assert_eq!(c.sampler.strategy, crate::data::Strategy::VariedOffset);
        let c = TrainConfig::full_scale_conv();
        assert_eq!((c.learning_rate, c.weight_decay), (5e-5, 1e-2));
        assert_eq!(c.checkpoint_every, 50);
    }

    #[test]
    fn warmup_is_linear() {
        let c = TrainConfig {
            warmup_epochs: 4,
            learning_rate: 1.0,
            ..TrainConfig::toy()
        };
        assert_eq!([1, 2, 4, 5].map(|e| c.lr_at(e)), [0.25, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn batch_of_one_is_rejected_with_spearman_weight() {
        let c = TrainConfig {
            batch_size: 1,
            ..TrainConfig::toy()
        };
        assert!(c.validate().is_err());
    }
}
