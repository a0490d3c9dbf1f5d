//! Python bindings. Arrays cross the boundary as `(shape, flat values)`.

use std::path::PathBuf;

use dfno_core::io::grd1::{read_array, write_array, Dtype};
use dfno_core::io::{Split, SplitRatios};
use dfno_core::models::{ModelSpec, Variant};
use dfno_core::ns::{generate_dataset, simulate, NsConfig, NsDatasetConfig};
use dfno_core::train::{metrics, TrainConfig};
use dfno_core::workflow::{eval_job, predict_job, train_job, TrainJob};
use ndarray::{Array2, ArrayD, IxDyn};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(dfno, DfnoError, PyException);

type Flat = (Vec<usize>, Vec<f64>);

fn err(e: dfno_core::Error) -> PyErr {
    DfnoError::new_err(e.to_string())
}

fn to_array(shape: Vec<usize>, data: Vec<f64>) -> PyResult<ArrayD<f64>> {
    ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| DfnoError::new_err(e.to_string()))
}

fn flat(a: &ArrayD<f64>) -> Flat {
    (a.shape().to_vec(), a.iter().copied().collect())
}

fn split(s: &str) -> PyResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(DfnoError::new_err(format!("unknown split `{other}`"))),
    }
}

/// Read a GRD1 array file. Returns `(shape, values, names)`.
#[pyfunction]
fn read_grd1(path: PathBuf) -> PyResult<(Vec<usize>, Vec<f64>, Vec<String>)> {
    let (a, names) = read_array(&path).map_err(err)?;
    let (shape, data) = flat(&a);
    Ok((shape, data, names))
}

#[pyfunction]
#[pyo3(signature = (path, shape, data, names=Vec::new()))]
fn write_grd1(path: PathBuf, shape: Vec<usize>, data: Vec<f64>, names: Vec<String>) -> PyResult<()> {
    write_array(&path, &to_array(shape, data)?, names, Dtype::F64).map_err(err)
}

/// Vorticity snapshots `[T, n, n]` of one forced simulation.
#[pyfunction]
#[pyo3(signature = (resolution=64, frames=10, interval=1.0, viscosity=1e-4, seed=0))]
fn simulate_ns(resolution: usize, frames: usize, interval: f64, viscosity: f64, seed: u64) -> PyResult<Flat> {
    let cfg = NsConfig { resolution, record_steps: frames, record_interval: interval, viscosity, seed, ..NsConfig::default() };
    let snaps = simulate(&cfg).map_err(err)?;
    let mut data = Vec::with_capacity(frames * resolution * resolution);
    for f in &snaps {
        data.extend(f.data().iter().copied());
    }
    Ok((vec![snaps.len(), resolution, resolution], data))
}

#[pyfunction]
#[pyo3(signature = (out, sims=10, seed=0, resolution=64, frames=50, interval=1.0, pooled=None, splits="70/20/10"))]
#[allow(clippy::too_many_arguments)]
fn gen_ns(
    out: PathBuf,
    sims: usize,
    seed: u64,
    resolution: usize,
    frames: usize,
    interval: f64,
    pooled: Option<Vec<usize>>,
    splits: &str,
) -> PyResult<usize> {
    let cfg = NsDatasetConfig {
        solver: NsConfig { resolution, record_steps: frames, record_interval: interval, seed, ..NsConfig::default() },
        sims,
        // Two coarser levels by default: n/2 and n/4.
        pooled: pooled.unwrap_or_else(|| vec![resolution / 2, resolution / 4]),
        splits: splits.parse::<SplitRatios>().map_err(err)?,
        ..NsDatasetConfig::default()
    };
    Ok(generate_dataset(&cfg, &out).map_err(err)?.records.len())
}

/// Train `model` (variant tag, e.g. "dfno") and return the best selection score.
#[pyfunction]
#[pyo3(signature = (data, model, out, epochs=10, lr=1e-3, batch=16, width=None, modes=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train(
    data: PathBuf,
    model: &str,
    out: PathBuf,
    epochs: usize,
    lr: f64,
    batch: usize,
    width: Option<usize>,
    modes: Option<Vec<usize>>,
    seed: u64,
) -> PyResult<f64> {
    let variant: Variant = model.parse().map_err(err)?;
    let mut spec = ModelSpec::new(variant, 1);
    if let Some(w) = width {
        spec.width = w;
    }
    if let Some(m) = modes {
        spec.modes = m;
    }
    let job = TrainJob {
        data,
        spec,
        input_res: None,
        targets: None,
        stride: 1,
        init_seed: seed,
        cfg: TrainConfig { lr, epochs, batch, seed, ..TrainConfig::default() },
        checkpoint: out,
        log: None,
    };
    Ok(train_job(&job).map_err(err)?.best_score)
}

/// Score a checkpoint and write the CSV. Returns `(model, resolution, mse)` per row.
#[pyfunction]
#[pyo3(signature = (ckpt, data, res, csv, split_name="test"))]
fn evaluate(ckpt: PathBuf, data: PathBuf, res: Vec<usize>, csv: PathBuf, split_name: &str) -> PyResult<Vec<(String, usize, f64)>> {
    let r = eval_job(&ckpt, &data, &res, split(split_name)?, true, &csv).map_err(err)?;
    Ok(r.rows.into_iter().map(|row| (row.model, row.resolution, row.mse)).collect())
}

#[pyfunction]
fn predict(ckpt: PathBuf, input: PathBuf, height: usize, width: usize, out: PathBuf) -> PyResult<Flat> {
    Ok(flat(&predict_job(&ckpt, &input, (height, width), &out).map_err(err)?))
}

#[pyfunction]
fn psnr(pred: Vec<f64>, target: Vec<f64>, peak: f64) -> PyResult<f64> {
    let n = pred.len();
    let (p, t) = (to_array(vec![n], pred)?, to_array(vec![target.len()], target)?);
    metrics::psnr(p.view(), t.view(), peak).map_err(err)
}

/// SSIM of two `rows x cols` images given row-major.
#[pyfunction]
fn ssim2d(a: Vec<f64>, b: Vec<f64>, rows: usize, cols: usize, range: f64) -> PyResult<f64> {
    let shape = |v: Vec<f64>| Array2::from_shape_vec((rows, cols), v).map_err(|e| DfnoError::new_err(e.to_string()));
    metrics::ssim2d(shape(a)?.view(), shape(b)?.view(), range).map_err(err)
}

#[pymodule]
fn dfno(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DfnoError", m.py().get_type::<DfnoError>())?;
    m.add_function(wrap_pyfunction!(read_grd1, m)?)?;
    m.add_function(wrap_pyfunction!(write_grd1, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_ns, m)?)?;
    m.add_function(wrap_pyfunction!(gen_ns, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim2d, m)?)?;
    Ok(())
}
