//! Evaluation against held-out ground truth, in physical units.

use std::path::Path;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use super::data::SampleSet;
use super::metrics::{mae, mse, psnr_channels, ssim};
use super::norm::NormStats;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::grid::resample::{apply_separable, interp_matrix};
use crate::grid::{Boundary, ResampleMode};
use crate::models::{adapter, AdapterMethod, Model};

pub const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Running sums: MAE and MSE over all elements, PSNR and SSIM per sample.
#[derive(Debug, Clone, Default)]
pub struct Accumulator {
    abs: f64,
    sq: f64,
    elems: usize,
    psnr: f64,
    ssim: f64,
    samples: usize,
}

impl Accumulator {
    /// Adds one `[C, ...]` sample.
    pub fn add(&mut self, pred: &Tensor, truth: &Tensor, ranges: &[f64]) -> Result<()> {
        let n = pred.len();
        self.abs += mae(pred.view(), truth.view())? * n as f64;
        self.sq += mse(pred.view(), truth.view())? * n as f64;
        self.elems += n;
        self.psnr += psnr_channels(pred.view(), truth.view(), 0, ranges)?;
        self.ssim += ssim(pred.view(), truth.view(), 0, ranges)?;
        self.samples += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.samples
    }

    pub fn finish(&self) -> Metrics {
        let e = self.elems.max(1) as f64;
        let s = self.samples.max(1) as f64;
        Metrics { mae: self.abs / e, mse: self.sq / e, psnr: self.psnr / s, ssim: self.ssim / s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub loss: String,
    pub resolution: usize,
    pub mae: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub model: String,
    pub resolution: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub skipped: Vec<Skipped>,
}

impl EvalReport {
    pub fn row(&self, model: &str, resolution: usize) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.model == model && r.resolution == resolution)
    }
}

fn row(model: &str, loss: &str, resolution: usize, acc: &Accumulator) -> EvalRow {
    let m = acc.finish();
    EvalRow { model: model.into(), loss: loss.into(), resolution, mae: m.mae, mse: m.mse, psnr: m.psnr, ssim: m.ssim, n: acc.count() }
}

/// Model outputs for every sample of `set` at each of `resolutions`,
/// denormalized: `out[k][i]` is sample `i` at `resolutions[k]`.
pub fn predict_set(model: &Model, set: &SampleSet, norm: &NormStats, resolutions: &[usize]) -> Result<Vec<Vec<Tensor>>> {
    let targets: Vec<(usize, usize)> = resolutions.iter().map(|&r| (r, r)).collect();
    let mut out = vec![Vec::with_capacity(set.len()); resolutions.len()];
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = stack_inputs(set, chunk)?;
        let x = norm.normalize(&x, 1)?;
        let p = model.predict(&x, &targets)?;
        for (k, (_, y)) in p.outputs.into_iter().enumerate() {
            let y = norm.denormalize(&y, 1)?;
            out[k].extend(y.axis_iter(Axis(0)).map(|v| v.to_owned()));
        }
    }
    Ok(out)
}

fn stack_inputs(set: &SampleSet, idx: &[usize]) -> Result<Tensor> {
    let views: Vec<_> = idx.iter().map(|&i| set.samples[i].input.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))
}

/// Bicubic interpolation of the trailing two axes of any tensor.
pub fn bicubic(t: &Tensor, target: usize, boundary: Boundary) -> Result<Tensor> {
    let n = t.ndim();
    let (h, w) = (t.shape()[n - 2], t.shape()[n - 1]);
    let my = interp_matrix(ResampleMode::Bicubic, h, target, boundary)?;
    let mx = interp_matrix(ResampleMode::Bicubic, w, target, boundary)?;
    let flat: Array3<f64> = t
        .to_shape((t.len() / (h * w), h, w))
        .map_err(|e| Error::shape(e.to_string()))?
        .into_owned();
    let out = apply_separable(&flat, my.view(), mx.view());
    let mut shape = t.shape().to_vec();
    shape[n - 2] = target;
    shape[n - 1] = target;
    out.into_shape_with_order(shape).map_err(|e| Error::shape(e.to_string()))
}

/// Non-learned reference: bicubic interpolation of the input. For frame
/// windows the last input frame is interpolated and held for every target
/// frame.
pub fn bicubic_baseline(set: &SampleSet, boundary: Boundary, ranges: &[f64]) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for (k, &r) in set.task.resolutions.iter().enumerate() {
        let mut acc = Accumulator::default();
        for s in &set.samples {
            let pred = if set.task.temporal {
                let frames = s.input.shape()[1];
                let last = s.input.index_axis(Axis(1), frames - 1).to_owned();
                let up = bicubic(&last, r, boundary)?.insert_axis(Axis(1));
                let reps = s.targets[k].shape()[1];
                let views: Vec<_> = (0..reps).map(|_| up.view()).collect();
                ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))?
            } else {
                bicubic(&s.input, r, boundary)?
            };
            acc.add(&pred, &s.targets[k], ranges)?;
        }
        rows.push(row("bicubic", "none", r, &acc));
    }
    Ok(rows)
}

/// Scores `model` on `set` at each of its resolutions. Resolutions the model
/// cannot produce are reported in `skipped`.
pub fn evaluate(model: &Model, set: &SampleSet, norm: &NormStats, loss: &str, ranges: &[f64], boundary: Boundary) -> Result<EvalReport> {
    let tag = model.name();
    let input = set.task.input_res;
    let mut report = EvalReport::default();
    let skip = |report: &mut EvalReport, name: &str, r: usize, reason: String| {
        log::warn!("skipping {name} at {r}x{r}: {reason}");
        report.skipped.push(Skipped { model: name.into(), resolution: r, reason });
    };

    if let Some(trained) = model.spec.variant.cnn_factor() {
        for (k, &r) in set.task.resolutions.iter().enumerate() {
            if r % input != 0 || r < input {
                skip(&mut report, tag, r, format!("{r} is not an integer multiple of the input {input}"));
                continue;
            }
            let f = r / input;
            let methods: Vec<Option<AdapterMethod>> = match (trained, f) {
                _ if f == trained => vec![None],
                (2, 4) => vec![Some(AdapterMethod::Recursion), Some(AdapterMethod::Bicubic)],
                (4, 2) => vec![Some(AdapterMethod::Pooling), Some(AdapterMethod::Bicubic)],
                _ => {
                    skip(&mut report, tag, r, format!("no adapter from {trained}x to {f}x"));
                    continue;
                }
            };
            for method in methods {
                let name = method.map_or(tag.to_string(), |m| format!("{tag}+{m}"));
                let mut acc = Accumulator::default();
                let idx: Vec<usize> = (0..set.len()).collect();
                for chunk in idx.chunks(EVAL_BATCH) {
                    let x = norm.normalize(&stack_inputs(set, chunk)?, 1)?;
                    let y = match method {
                        None => adapter::cross_factor(model, &x, f, AdapterMethod::Bicubic)?,
                        Some(m) => adapter::cross_factor(model, &x, f, m)?,
                    };
                    let y = norm.denormalize(&y, 1)?;
                    for (p, &i) in y.axis_iter(Axis(0)).zip(chunk) {
                        acc.add(&p.to_owned(), &set.samples[i].targets[k], ranges)?;
                    }
                }
                report.rows.push(row(&name, loss, r, &acc));
            }
        }
        return Ok(report);
    }

    let mut wanted: Vec<usize> = Vec::new();
    for &r in &set.task.resolutions {
        if r < input {
            skip(&mut report, tag, r, format!("{r} is below the input resolution {input}"));
        } else {
            wanted.push(r);
        }
    }
    let temporal = model.spec.variant.is_temporal();
    let mut query = wanted.clone();
    if temporal && !query.contains(&input) {
        query.push(input);
    }
    if query.is_empty() {
        return Ok(report);
    }
    let preds = predict_set(model, set, norm, &query)?;
    let target_of = |r: usize| set.task.resolutions.iter().position(|&x| x == r).expect("requested");
    for (k, &r) in wanted.iter().enumerate() {
        let t = target_of(r);
        let mut acc = Accumulator::default();
        for (p, s) in preds[k].iter().zip(&set.samples) {
            acc.add(p, &s.targets[t], ranges)?;
        }
        report.rows.push(row(tag, loss, r, &acc));
    }
    if temporal {
        // Bicubic interpolation of the model's own prediction at the input
        // resolution, the reference for zero-shot outputs.
        let base = query.iter().position(|&x| x == input).expect("queried");
        for &r in wanted.iter().filter(|&&r| r > input) {
            let t = target_of(r);
            let mut acc = Accumulator::default();
            for (p, s) in preds[base].iter().zip(&set.samples) {
                acc.add(&bicubic(p, r, boundary)?, &s.targets[t], ranges)?;
            }
            report.rows.push(row(&format!("{tag}+bicubic"), loss, r, &acc));
        }
    }
    Ok(report)
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::data::{Sample, TaskSpec};
    use ndarray::{Array, Dimension, IxDyn};

    fn set(temporal: bool) -> SampleSet {
        let shape: &[usize] = if temporal { &[1, 5, 8, 8] } else { &[2, 8, 8] };
        let tshape = |r: usize| {
            let mut s = shape.to_vec();
            let n = s.len();
            s[n - 2] = r;
            s[n - 1] = r;
            s
        };
        let samples = (0..3)
            .map(|k| Sample {
                input: Array::from_shape_fn(IxDyn(shape), |d| ((d[d.ndim() - 1] + k) as f64 * 0.3).sin()),
                targets: [8, 16]
                    .iter()
                    .map(|&r| Array::from_shape_fn(IxDyn(&tshape(r)), |d| ((d[d.ndim() - 2] * k) as f64 * 0.1).cos()))
                    .collect(),
            })
            .collect();
        SampleSet {
            task: TaskSpec { input_res: 8, resolutions: vec![8, 16], temporal, stride: 1 },
            channels: shape[0],
            samples,
        }
    }

    #[test]
    fn truth_against_itself() {
        let s = set(false);
        let ranges = s.target_ranges();
        for (k, _) in s.task.resolutions.iter().enumerate() {
            let mut acc = Accumulator::default();
            for x in &s.samples {
                acc.add(&x.targets[k], &x.targets[k], &ranges).unwrap();
            }
            let m = acc.finish();
            assert_eq!((m.mae, m.mse, m.ssim), (0.0, 0.0, 1.0));
            assert_eq!(m.psnr, f64::INFINITY);
        }
    }

    #[test]
    fn bicubic_rows_are_deterministic() {
        for temporal in [false, true] {
            let s = set(temporal);
            let r = s.target_ranges();
            let a = bicubic_baseline(&s, Boundary::Periodic, &r).unwrap();
            assert_eq!(a, bicubic_baseline(&s, Boundary::Periodic, &r).unwrap());
            assert_eq!(a.len(), 2);
            assert!(a.iter().all(|row| row.mse.is_finite() && row.n == 3));
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eval.csv");
        let rows = vec![
            EvalRow { model: "dfno".into(), loss: "l2".into(), resolution: 32, mae: 0.1, mse: 0.01, psnr: f64::INFINITY, ssim: 1.0, n: 4 },
        ];
        write_eval_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("model,loss,resolution,mae,mse,psnr,ssim,n\n"), "{text}");
        assert_eq!(read_eval_csv(&p).unwrap(), rows);
    }
}
