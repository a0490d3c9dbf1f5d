//! Cross-factor evaluation of the fixed-factor CNN baselines.

use std::fmt;
use std::str::FromStr;

use ndarray::Axis;

use super::Model;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::grid::resample::{interp_decimate, upsample_with};
use crate::grid::{average_pool, Field, ResampleMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterMethod {
    /// Feed the model its own output (2x model to 4x).
    Recursion,
    /// Bicubic interpolation of the model output.
    Bicubic,
    /// Average pooling of the model output (4x model to 2x).
    Pooling,
}

impl fmt::Display for AdapterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdapterMethod::Recursion => "recursion",
            AdapterMethod::Bicubic => "bicubic",
            AdapterMethod::Pooling => "pooling",
        })
    }
}

impl FromStr for AdapterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recursion" => Ok(Self::Recursion),
            "bicubic" => Ok(Self::Bicubic),
            "pooling" => Ok(Self::Pooling),
            other => Err(Error::invalid(format!("unknown adapter `{other}`"))),
        }
    }
}

fn per_sample(t: &Tensor, f: impl Fn(&Field) -> Result<Field>) -> Result<Tensor> {
    let mut outs = Vec::with_capacity(t.shape()[0]);
    for b in t.axis_iter(Axis(0)) {
        let field = Field::new(b.to_owned().into_dimensionality().map_err(|e| Error::shape(e.to_string()))?)?;
        outs.push(f(&field)?.into_inner());
    }
    let views: Vec<_> = outs.iter().map(|a| a.view()).collect();
    Ok(ndarray::stack(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?.into_dyn())
}

/// Maps a prediction made at `trained` factor to `eval` factor without
/// re-running the model (all methods except recursion).
pub fn adapt_prediction(pred: &Tensor, trained: usize, eval: usize, method: AdapterMethod, model: &Model) -> Result<Tensor> {
    if trained == eval {
        return Ok(pred.clone());
    }
    let (h, w) = (pred.shape()[2], pred.shape()[3]);
    let boundary = model.spec.boundary;
    match (trained, eval, method) {
        (2, 4, AdapterMethod::Bicubic) => {
            per_sample(pred, |f| upsample_with(f, ResampleMode::Bicubic, (2 * h, 2 * w), boundary))
        }
        (4, 2, AdapterMethod::Pooling) => per_sample(pred, |f| average_pool(f, 2)),
        (4, 2, AdapterMethod::Bicubic) => per_sample(pred, |f| interp_decimate(f, ResampleMode::Bicubic, (h / 2, w / 2))),
        _ => Err(Error::invalid(format!("no {method} adapter from {trained}x to {eval}x"))),
    }
}

/// Prediction of a CNN baseline at `eval` factor for input `x: [B, C, H, W]`.
pub fn cross_factor(model: &Model, x: &Tensor, eval: usize, method: AdapterMethod) -> Result<Tensor> {
    let trained = model
        .spec
        .variant
        .cnn_factor()
        .ok_or_else(|| Error::invalid(format!("{} is not a fixed-factor baseline", model.spec.variant)))?;
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let run = |input: &Tensor| -> Result<Tensor> {
        let (ih, iw) = (input.shape()[2], input.shape()[3]);
        let p = model.predict(input, &[(trained * ih, trained * iw)])?;
        Ok(p.outputs.into_iter().next().expect("one output").1)
    };
    let first = run(x)?;
    if trained == eval {
        return Ok(first);
    }
    match (trained, eval, method) {
        (2, 4, AdapterMethod::Recursion) => {
            let out = run(&first)?;
            debug_assert_eq!(out.shape()[2..], [4 * h, 4 * w]);
            Ok(out)
        }
        _ => adapt_prediction(&first, trained, eval, method, model),
    }
}
