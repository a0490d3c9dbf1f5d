//! Turning dataset records into model inputs and targets.

use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::{Dataset, SourceTag, Split};
use crate::train::NormStats;

/// What to extract from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Side length of the model input.
    pub input_res: usize,
    /// Side lengths of the targets, one tensor per entry.
    pub resolutions: Vec<usize>,
    /// Frame windows (`[C, T, H, W]`) instead of single snapshots (`[C, H, W]`).
    pub temporal: bool,
    /// Offset between consecutive windows or snapshots of one simulation.
    pub stride: usize,
}

/// One example in physical units; `targets[i]` is at `resolutions[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub targets: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub task: TaskSpec,
    pub channels: usize,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks `idx` into batch tensors: the input and one target per resolution.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<Tensor>)> {
        let stack = |f: &dyn Fn(&Sample) -> &Tensor| -> Result<Tensor> {
            let views: Vec<_> = idx.iter().map(|&i| f(&self.samples[i]).view()).collect();
            ndarray::stack(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))
        };
        let input = stack(&|s| &s.input)?;
        let targets = (0..self.task.resolutions.len()).map(|k| stack(&|s| &s.targets[k])).collect::<Result<_>>()?;
        Ok((input, targets))
    }

    /// Applies z-score normalization (channel axis 0) to inputs and targets.
    pub fn normalized(&self, norm: &NormStats) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    input: norm.normalize(&s.input, 0)?,
                    targets: s.targets.iter().map(|t| norm.normalize(t, 0)).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { task: self.task.clone(), channels: self.channels, samples })
    }

    /// Per-channel dynamic range (max - min) over every target.
    pub fn target_ranges(&self) -> Vec<f64> {
        let mut lo = vec![f64::INFINITY; self.channels];
        let mut hi = vec![f64::NEG_INFINITY; self.channels];
        for s in &self.samples {
            for t in &s.targets {
                for (c, lane) in t.axis_iter(Axis(0)).enumerate() {
                    for &v in lane {
                        lo[c] = lo[c].min(v);
                        hi[c] = hi[c].max(v);
                    }
                }
            }
        }
        lo.iter().zip(&hi).map(|(l, h)| if h > l { h - l } else { 1.0 }).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self { task: self.task.clone(), channels: self.channels, samples: idx.iter().map(|&i| self.samples[i].clone()).collect() }
    }
}

/// Loads every example of `split`.
pub fn load_samples(ds: &Dataset, split: Split, task: &TaskSpec) -> Result<SampleSet> {
    let m = &ds.manifest;
    if task.stride == 0 {
        return Err(Error::invalid("sample stride must be positive"));
    }
    for &r in task.resolutions.iter().chain([&task.input_res]) {
        if !m.ladder.contains(&r) {
            return Err(Error::Data(format!("dataset `{}` has no {r}x{r} level (ladder {:?})", m.id, m.ladder)));
        }
    }
    let temporal_source = m.source == SourceTag::NsSim;
    if task.temporal && !temporal_source {
        return Err(Error::Data(format!("dataset `{}` holds static fields; temporal models need simulations", m.id)));
    }
    let channels = m.channels.len();
    let mut samples = Vec::new();
    for rec in m.split(split) {
        let input = ds.load(rec, task.input_res)?;
        let targets: Vec<Tensor> = task.resolutions.iter().map(|&r| ds.load(rec, r)).collect::<Result<_>>()?;
        if !temporal_source {
            samples.push(Sample { input, targets });
            continue;
        }
        // [T, C, n, n] per level.
        let frames = input.shape()[0];
        if task.temporal {
            let half = m.window.unwrap_or(10) / 2;
            let window = |a: &Tensor, from: usize| -> Tensor {
                a.slice_axis(Axis(0), (from..from + half).into()).permuted_axes(vec![1, 0, 2, 3]).as_standard_layout().into_owned()
            };
            let mut start = 0;
            while start + 2 * half <= frames {
                samples.push(Sample {
                    input: window(&input, start),
                    targets: targets.iter().map(|t| window(t, start + half)).collect(),
                });
                start += task.stride;
            }
        } else {
            for t in (0..frames).step_by(task.stride) {
                samples.push(Sample {
                    input: input.slice(s![t, .., .., ..]).into_owned().into_dyn(),
                    targets: targets.iter().map(|a| a.slice(s![t, .., .., ..]).into_owned().into_dyn()).collect(),
                });
            }
        }
    }
    Ok(SampleSet { task: task.clone(), channels, samples })
}

/// Per-channel dynamic range (max - min) of `split` at the dataset's finest
/// resolution; the PSNR peak and SSIM range used by evaluation.
pub fn split_ranges(ds: &Dataset, split: Split) -> Result<Vec<f64>> {
    let m = &ds.manifest;
    let c = m.channels.len();
    let axis = if m.source == SourceTag::NsSim { 1 } else { 0 };
    let mut lo = vec![f64::INFINITY; c];
    let mut hi = vec![f64::NEG_INFINITY; c];
    for rec in m.split(split) {
        let a = ds.load(rec, m.base_resolution())?;
        for (k, lane) in a.axis_iter(Axis(axis)).enumerate() {
            for &v in lane {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
    }
    Ok(lo.iter().zip(&hi).map(|(l, h)| if h > l { h - l } else { 1.0 }).collect())
}
