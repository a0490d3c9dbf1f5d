//! Per-channel z-score normalization.

use ndarray::{ArrayD, ArrayViewD, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Running sums for [`NormStats`].
#[derive(Debug, Clone)]
pub struct NormAccumulator {
    count: Vec<u64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl NormAccumulator {
    pub fn new(channels: usize) -> Self {
        Self { count: vec![0; channels], sum: vec![0.0; channels], sum_sq: vec![0.0; channels] }
    }

    /// Adds every value of `data`, whose channel index lives on `axis`.
    pub fn add(&mut self, data: ArrayViewD<f64>, axis: usize) -> Result<()> {
        if data.len_of(Axis(axis)) != self.sum.len() {
            return Err(Error::shape(format!(
                "expected {} channels on axis {axis}, got shape {:?}",
                self.sum.len(),
                data.shape()
            )));
        }
        for (c, lane) in data.axis_iter(Axis(axis)).enumerate() {
            for &v in lane.iter() {
                self.sum[c] += v;
                self.sum_sq[c] += v * v;
            }
            self.count[c] += lane.len() as u64;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<NormStats> {
        let mut mean = Vec::with_capacity(self.sum.len());
        let mut std = Vec::with_capacity(self.sum.len());
        for c in 0..self.sum.len() {
            if self.count[c] == 0 {
                return Err(Error::Data(format!("no samples for channel {c}")));
            }
            let n = self.count[c] as f64;
            let m = self.sum[c] / n;
            let var = (self.sum_sq[c] / n - m * m).max(0.0);
            let s = var.sqrt();
            mean.push(m);
            // A constant channel would divide by zero; leave it unscaled.
            std.push(if s > 1e-12 { s } else { 1.0 });
        }
        Ok(NormStats { mean, std })
    }
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn apply(&self, data: &ArrayD<f64>, axis: usize, f: impl Fn(f64, f64, f64) -> f64) -> Result<ArrayD<f64>> {
        if data.len_of(Axis(axis)) != self.mean.len() {
            return Err(Error::shape(format!(
                "normalization has {} channels, data shape {:?} (channel axis {axis})",
                self.mean.len(),
                data.shape()
            )));
        }
        let mut out = data.clone();
        for (c, mut lane) in out.axis_iter_mut(Axis(axis)).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            lane.mapv_inplace(|v| f(v, m, s));
        }
        Ok(out)
    }

    pub fn normalize(&self, data: &ArrayD<f64>, axis: usize) -> Result<ArrayD<f64>> {
        self.apply(data, axis, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, data: &ArrayD<f64>, axis: usize) -> Result<ArrayD<f64>> {
        self.apply(data, axis, |v, m, s| v * s + m)
    }
}
