//! The training loop.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::SampleSet;
use super::eval::{predict_set, Metrics};
use super::metrics::Loss;
use super::norm::NormStats;
use crate::autodiff::{AdamConfig, ParamStore};
use crate::error::{Error, Result};
use crate::io::checkpoint::save_checkpoint;
use crate::models::Model;
use crate::nn::unet::apply_bn_updates;
use crate::nn::Ctx;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub loss: Loss,
    pub seed: u64,
    /// Validate every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<u64>,
    /// Loss weight per target resolution; empty means 1 for each.
    pub target_weights: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, epochs: 600, batch: 16, loss: Loss::L2, seed: 0, eval_every: 1, max_steps: None, target_weights: Vec::new() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch == 0 || self.eval_every == 0 {
            return Err(Error::invalid("epochs, batch size and eval cadence must be positive"));
        }
        if self.target_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("target weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub val: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub steps: u64,
    /// Epoch whose weights were kept (best validation MSE, or best training
    /// loss without a validation split).
    pub best_epoch: usize,
    pub best_score: f64,
}

#[derive(Debug, Default)]
pub struct TrainOutputs<'a> {
    /// Best checkpoint, rewritten whenever the selection score improves.
    pub checkpoint: Option<&'a Path>,
    /// Append-only CSV with one row per epoch.
    pub log: Option<&'a Path>,
    /// Extra key/value pairs stored in the checkpoint header.
    pub meta: BTreeMap<String, String>,
}

const LOG_HEADER: [&str; 7] = ["epoch", "step", "train_loss", "val_mae", "val_mse", "val_psnr", "val_ssim"];

fn append_log(path: &Path, row: &EpochLog) -> Result<()> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let fresh = file.metadata()?.len() == 0;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(LOG_HEADER)?;
    }
    let mut rec = vec![row.epoch.to_string(), row.step.to_string(), row.train_loss.to_string()];
    match &row.val {
        Some(m) => rec.extend([m.mae, m.mse, m.psnr, m.ssim].map(|v| v.to_string())),
        None => rec.extend(std::iter::repeat_n(String::new(), 4)),
    }
    w.write_record(&rec)?;
    w.flush()?;
    Ok(())
}

/// Trains `model` in place. `train` and `val` hold physical values; both are
/// normalized with `norm`. On return the model holds the selected weights.
pub fn train(
    model: &mut Model,
    train: &SampleSet,
    val: Option<&SampleSet>,
    norm: &NormStats,
    cfg: &TrainConfig,
    out: &TrainOutputs,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let res = &train.task.resolutions;
    let weights = if cfg.target_weights.is_empty() { vec![1.0; res.len()] } else { cfg.target_weights.clone() };
    if weights.len() != res.len() {
        return Err(Error::invalid(format!("{} target weights for {} resolutions", weights.len(), res.len())));
    }
    let targets: Vec<(usize, usize)> = res.iter().map(|&r| (r, r)).collect();
    let data = train.normalized(norm)?;
    let val = val.filter(|v| !v.is_empty());
    let ranges = val.map(|v| v.target_ranges());
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    let mut step = 0u64;
    let mut best: Option<(usize, f64, ParamStore)> = None;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut stop = false;
        for chunk in order.chunks(cfg.batch) {
            let (x, ys) = data.batch(chunk)?;
            let mut ctx = Ctx::new(&model.params, true);
            let xv = ctx.g.constant(x);
            let outs = model.forward(&mut ctx, xv, &targets)?;
            let mut total = None;
            for ((o, y), &w) in outs.into_iter().zip(ys).zip(&weights) {
                let yv = ctx.g.constant(y);
                let l = cfg.loss.build(&mut ctx.g, o, yv)?;
                let l = ctx.g.scale(l, w)?;
                total = Some(match total {
                    None => l,
                    Some(t) => ctx.g.add(t, l)?,
                });
            }
            let total = total.expect("at least one target");
            let value = *ctx.g.real(total).first().expect("scalar loss");
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, step {}; the last saved checkpoint is kept",
                    step + 1
                )));
            }
            ctx.g.backward(total)?;
            let Ctx { g, bn_updates, .. } = ctx;
            g.write_grads(&mut model.params)?;
            model.params.adam_step(&adam)?;
            apply_bn_updates(&mut model.params, &bn_updates)?;
            step += 1;
            loss_sum += value * chunk.len() as f64;
            seen += chunk.len();
            if cfg.max_steps.is_some_and(|m| step >= m) {
                stop = true;
                break;
            }
        }
        let train_loss = loss_sum / seen as f64;
        let last = stop || epoch == cfg.epochs;
        let val_metrics = match (val, &ranges) {
            (Some(v), Some(r)) if last || epoch % cfg.eval_every == 0 => Some(validate(model, v, norm, r)?),
            _ => None,
        };
        let row = EpochLog { epoch, step, train_loss, val: val_metrics };
        if let Some(path) = out.log {
            append_log(path, &row)?;
        }
        log::info!("epoch {epoch} step {step} train_loss {train_loss:.6e}{}", match &row.val {
            Some(m) => format!(" val_mse {:.6e}", m.mse),
            None => String::new(),
        });
        let score = match (&row.val, val) {
            (Some(m), _) => Some(m.mse),
            (None, None) => Some(train_loss),
            (None, Some(_)) => None,
        };
        history.push(row);
        if let Some(score) = score {
            if !score.is_finite() {
                return Err(Error::Numeric(format!("non-finite validation score at epoch {epoch}")));
            }
            if best.as_ref().is_none_or(|(_, b, _)| score < *b) {
                if let Some(path) = out.checkpoint {
                    let mut meta = out.meta.clone();
                    meta.insert("epoch".into(), epoch.to_string());
                    meta.insert("score".into(), score.to_string());
                    save_checkpoint(path, model, &meta)?;
                }
                best = Some((epoch, score, model.params.clone()));
            }
        }
        if stop {
            break 'epochs;
        }
    }
    let (best_epoch, best_score, params) = best.expect("at least one scored epoch");
    model.params = params;
    Ok(TrainReport { history, steps: step, best_epoch, best_score })
}

/// Physical-unit metrics on `set`, averaged over its target resolutions.
fn validate(model: &Model, set: &SampleSet, norm: &NormStats, ranges: &[f64]) -> Result<Metrics> {
    let preds = predict_set(model, set, norm, &set.task.resolutions)?;
    let mut acc = Metrics::default();
    for (k, per_res) in preds.iter().enumerate() {
        let mut m = super::eval::Accumulator::default();
        for (p, s) in per_res.iter().zip(&set.samples) {
            m.add(p, &s.targets[k], ranges)?;
        }
        let m = m.finish();
        acc.mae += m.mae;
        acc.mse += m.mse;
        acc.psnr += m.psnr;
        acc.ssim += m.ssim;
    }
    let n = preds.len() as f64;
    Ok(Metrics { mae: acc.mae / n, mse: acc.mse / n, psnr: acc.psnr / n, ssim: acc.ssim / n })
}
