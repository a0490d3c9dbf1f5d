//! End-to-end jobs shared by the command line and the Python bindings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::grid::Boundary;
use crate::io::checkpoint::{load_checkpoint, save_checkpoint};
use crate::io::grd1::{read_array, write_array, Dtype};
use crate::io::{Dataset, Split};
use crate::models::{Model, ModelSpec};
use crate::train::eval::{bicubic_baseline, evaluate, write_eval_csv, EvalReport, Skipped};
use crate::train::{load_samples, split_ranges, train, NormStats, TaskSpec, TrainConfig, TrainOutputs, TrainReport};

/// Resolutions and sampling a model was trained with, stored in its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingContext {
    pub dataset: String,
    pub channels: Vec<String>,
    pub norm: NormStats,
    pub loss: String,
    pub task: TaskSpec,
}

impl TrainingContext {
    fn to_meta(&self) -> Result<BTreeMap<String, String>> {
        let mut m = BTreeMap::new();
        m.insert("context".into(), serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))?);
        Ok(m)
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        let raw = meta.get("context").ok_or_else(|| Error::Data("checkpoint has no training context".into()))?;
        serde_json::from_str(raw).map_err(|e| Error::Format(format!("training context: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct TrainJob {
    pub data: PathBuf,
    pub spec: ModelSpec,
    /// Defaults to the coarsest dataset level.
    pub input_res: Option<usize>,
    /// Defaults to `[2x]` for static models, `[1x, 2x]` for temporal ones and
    /// the trained factor for the U-Net baselines.
    pub targets: Option<Vec<usize>>,
    pub stride: usize,
    pub init_seed: u64,
    pub cfg: TrainConfig,
    pub checkpoint: PathBuf,
    pub log: Option<PathBuf>,
}

pub fn default_targets(spec: &ModelSpec, input: usize) -> Vec<usize> {
    match spec.variant.cnn_factor() {
        Some(f) => vec![f * input],
        None if spec.variant.is_temporal() => vec![input, 2 * input],
        None => vec![2 * input],
    }
}

pub fn train_job(job: &TrainJob) -> Result<TrainReport> {
    let ds = Dataset::open(&job.data)?;
    let m = &ds.manifest;
    let input_res = job.input_res.unwrap_or_else(|| *m.ladder.iter().min().expect("validated ladder"));
    let resolutions = job.targets.clone().unwrap_or_else(|| default_targets(&job.spec, input_res));
    let task = TaskSpec { input_res, resolutions, temporal: job.spec.variant.is_temporal(), stride: job.stride };
    let mut spec = job.spec.clone();
    spec.in_channels = m.channels.len();
    spec.out_channels = m.channels.len();
    spec.boundary = m.boundary;
    let train_set = load_samples(&ds, Split::Train, &task)?;
    let val_set = load_samples(&ds, Split::Val, &task)?;
    log::info!("{} training samples, {} validation samples", train_set.len(), val_set.len());
    let ctx = TrainingContext {
        dataset: m.id.clone(),
        channels: m.channels.clone(),
        norm: m.norm.clone(),
        loss: job.cfg.loss.tag().into(),
        task,
    };
    let mut model = Model::init(spec, job.init_seed)?;
    if let Some(log) = &job.log {
        if let Some(dir) = log.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
    }
    let out = TrainOutputs { checkpoint: Some(&job.checkpoint), log: job.log.as_deref(), meta: ctx.to_meta()? };
    train(&mut model, &train_set, Some(&val_set), &m.norm, &job.cfg, &out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub units: String,
    pub dataset: String,
    pub dataset_checksum: String,
    pub checkpoint_sha256: String,
    pub split: String,
    pub input_resolution: usize,
    pub psnr_peak: Vec<f64>,
    pub ssim_range: Vec<f64>,
    pub skipped: Vec<Skipped>,
}

/// Scores a checkpoint on a dataset split; writes the CSV and a
/// `<csv>.meta.toml` sidecar.
pub fn eval_job(ckpt: &Path, data: &Path, res: &[usize], split: Split, baseline: bool, csv: &Path) -> Result<EvalReport> {
    let ckpt_bytes = std::fs::read(ckpt).map_err(|e| Error::Data(format!("cannot read {}: {e}", ckpt.display())))?;
    let (model, meta) = load_checkpoint(ckpt)?;
    let ctx = TrainingContext::from_meta(&meta)?;
    let ds = Dataset::open(data)?;
    let m = &ds.manifest;
    if m.channels != ctx.channels {
        return Err(Error::Data(format!("dataset channels {:?} differ from the model's {:?}", m.channels, ctx.channels)));
    }
    let mut available = Vec::new();
    let mut skipped = Vec::new();
    for &r in res {
        if m.ladder.contains(&r) {
            available.push(r);
        } else {
            skipped.push(Skipped { model: "*".into(), resolution: r, reason: format!("dataset has no {r}x{r} ground truth") });
        }
    }
    let task = TaskSpec { resolutions: available, ..ctx.task.clone() };
    let ranges = split_ranges(&ds, split)?;
    let mut report = EvalReport { rows: Vec::new(), skipped };
    if !task.resolutions.is_empty() {
        let set = load_samples(&ds, split, &task)?;
        if set.is_empty() {
            return Err(Error::Data(format!("the {split} split is empty")));
        }
        let r = evaluate(&model, &set, &m.norm, &ctx.loss, &ranges, m.boundary)?;
        report.rows.extend(r.rows);
        report.skipped.extend(r.skipped);
        if baseline {
            report.rows.extend(bicubic_baseline(&set, m.boundary, &ranges)?);
        }
    }
    write_eval_csv(csv, &report.rows)?;
    let sidecar = EvalMeta {
        units: "physical".into(),
        dataset: m.id.clone(),
        dataset_checksum: m.checksum()?,
        checkpoint_sha256: crate::io::store::sha256_hex(&ckpt_bytes),
        split: split.to_string(),
        input_resolution: task.input_res,
        psnr_peak: ranges.clone(),
        ssim_range: ranges,
        skipped: report.skipped.clone(),
    };
    let text = toml::to_string(&sidecar).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(meta_path(csv), text)?;
    Ok(report)
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.toml");
    PathBuf::from(s)
}

/// Zero-shot inference on one GRD1 sample (`[C, H, W]`, or `[C, T, H, W]` for
/// temporal models; a leading batch axis is also accepted).
pub fn predict_job(ckpt: &Path, input: &Path, target: (usize, usize), out: &Path) -> Result<Tensor> {
    let (model, meta) = load_checkpoint(ckpt)?;
    let ctx = TrainingContext::from_meta(&meta)?;
    let (x, _) = read_array(input)?;
    let single = if model.spec.variant.is_temporal() { 4 } else { 3 };
    let unbatched = x.ndim() == single;
    let batched = match x.ndim() {
        n if n == single => x.insert_axis(ndarray::Axis(0)),
        n if n == single + 1 => x,
        n => return Err(Error::Data(format!("{} expects a rank-{single} sample, got rank {n}", model.name()))),
    };
    if batched.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("input contains non-finite values".into()));
    }
    let xn = ctx.norm.normalize(&batched, 1)?;
    let y = match model.spec.variant.cnn_factor() {
        Some(_) => {
            let n = xn.ndim();
            let (h, w) = (xn.shape()[n - 2], xn.shape()[n - 1]);
            let f = target.0 / h;
            if f == 0 || target != (f * h, f * w) {
                return Err(Error::invalid(format!(
                    "{} needs one integer factor of the {h}x{w} input, got {}x{}",
                    model.name(),
                    target.0,
                    target.1
                )));
            }
            crate::models::cross_factor(&model, &xn, f, crate::models::AdapterMethod::Bicubic)?
        }
        None => model.predict(&xn, &[target])?.outputs.remove(0).1,
    };
    let y = ctx.norm.denormalize(&y, 1)?;
    let y = if unbatched { y.index_axis(ndarray::Axis(0), 0).to_owned() } else { y };
    write_array(out, &y, ctx.channels.clone(), Dtype::F64)?;
    Ok(y)
}

/// Persist a freshly initialized model (used for untrained-checkpoint smoke runs).
pub fn init_checkpoint(data: &Path, spec: ModelSpec, seed: u64, stride: usize, out: &Path) -> Result<()> {
    let ds = Dataset::open(data)?;
    let m = &ds.manifest;
    let input_res = *m.ladder.iter().min().expect("validated ladder");
    let mut spec = spec;
    spec.in_channels = m.channels.len();
    spec.out_channels = m.channels.len();
    spec.boundary = m.boundary;
    let ctx = TrainingContext {
        dataset: m.id.clone(),
        channels: m.channels.clone(),
        norm: m.norm.clone(),
        loss: "none".into(),
        task: TaskSpec { input_res, resolutions: default_targets(&spec, input_res), temporal: spec.variant.is_temporal(), stride },
    };
    let model = Model::init(spec, seed)?;
    save_checkpoint(out, &model, &ctx.to_meta()?)
}

pub fn parse_boundary(s: &str) -> Result<Boundary> {
    match s {
        "periodic" => Ok(Boundary::Periodic),
        "replicate" => Ok(Boundary::Replicate),
        other => Err(Error::invalid(format!("unknown boundary `{other}` (periodic or replicate)"))),
    }
}
