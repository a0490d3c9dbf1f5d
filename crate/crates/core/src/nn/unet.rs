//! U-Net encoder/decoder used by the CNN baselines.

use ndarray::{Array1, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{init_fan_in, init_pointwise, pointwise, Ctx};
use crate::autodiff::{PadMode, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnetConfig {
    /// Feature widths per level; the bottleneck repeats the last one.
    pub widths: Vec<usize>,
    pub pad: PadMode,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self { widths: vec![64, 128, 256, 512], pad: PadMode::Zero }
    }
}

impl UnetConfig {
    /// Required divisor of the input grid (one 2x pooling per level).
    pub fn divisor(&self) -> usize {
        1 << self.widths.len()
    }
}

fn init_bn(store: &mut ParamStore, name: &str, c: usize) {
    store.insert_filled(format!("{name}.gamma"), &[c], 1.0);
    store.insert_zeros(format!("{name}.beta"), &[c]);
    store.set_buffer(format!("{name}.running_mean"), Tensor::zeros(IxDyn(&[c])));
    store.set_buffer(format!("{name}.running_var"), Tensor::ones(IxDyn(&[c])));
}

/// Batch normalization: batch statistics in training mode (queuing a
/// running-statistic update), running statistics otherwise.
pub fn batchnorm(ctx: &mut Ctx, name: &str, x: Var) -> Result<Var> {
    if ctx.training {
        let gamma = ctx.param(&format!("{name}.gamma"))?;
        let beta = ctx.param(&format!("{name}.beta"))?;
        let (y, mean, var) = ctx.g.batchnorm_train(x, gamma, beta, BN_EPS)?;
        let shape = ctx.g.shape(x);
        let count: usize = shape.iter().enumerate().filter(|(i, _)| *i != 1).map(|(_, &d)| d).product();
        let unbiased = if count > 1 { var * (count as f64 / (count - 1) as f64) } else { var };
        ctx.bn_updates.push((name.to_string(), mean, unbiased));
        Ok(y)
    } else {
        let rm = buffer(ctx.store, &format!("{name}.running_mean"))?;
        let rv = buffer(ctx.store, &format!("{name}.running_var"))?;
        let g: Array1<f64> = ctx.store.value(&format!("{name}.gamma"))?.iter().copied().collect();
        let b: Array1<f64> = ctx.store.value(&format!("{name}.beta"))?.iter().copied().collect();
        let scale = &g / &rv.mapv(|v| (v + BN_EPS).sqrt());
        let shift = &b - &(&rm * &scale);
        // Inference folds the statistics into constants, so gamma and beta
        // are not bound as trainable inputs here.
        ctx.g.channel_affine(x, scale, shift)
    }
}

fn buffer(store: &ParamStore, name: &str) -> Result<Array1<f64>> {
    store
        .buffer(name)
        .map(|t| t.iter().copied().collect())
        .ok_or_else(|| Error::invalid(format!("missing buffer `{name}`")))
}

/// Folds queued batch statistics into the running buffers.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[(String, Array1<f64>, Array1<f64>)]) -> Result<()> {
    for (name, mean, var) in updates {
        for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
            let key = format!("{name}.{suffix}");
            let mut cur = store
                .buffer(&key)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("missing buffer `{key}`")))?;
            for (c, b) in cur.iter_mut().zip(batch.iter()) {
                *c = (1.0 - BN_MOMENTUM) * *c + BN_MOMENTUM * b;
            }
            store.set_buffer(key, cur);
        }
    }
    Ok(())
}

fn init_double_conv(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) {
    init_fan_in(store, &format!("{name}.c1.w"), &[c_out, c_in, 3, 3], c_in * 9, 2f64.sqrt(), rng);
    init_bn(store, &format!("{name}.bn1"), c_out);
    init_fan_in(store, &format!("{name}.c2.w"), &[c_out, c_out, 3, 3], c_out * 9, 2f64.sqrt(), rng);
    init_bn(store, &format!("{name}.bn2"), c_out);
}

/// `(conv3x3 -> batchnorm -> relu) x 2`.
pub fn double_conv(ctx: &mut Ctx, name: &str, x: Var, pad: PadMode) -> Result<Var> {
    let mut h = x;
    for i in 1..=2 {
        let w = ctx.param(&format!("{name}.c{i}.w"))?;
        h = ctx.g.conv2d(h, w, None, 1, pad)?;
        h = batchnorm(ctx, &format!("{name}.bn{i}"), h)?;
        h = ctx.g.relu(h)?;
    }
    Ok(h)
}

fn level_width(cfg: &UnetConfig, level: usize) -> usize {
    cfg.widths[level.min(cfg.widths.len() - 1)]
}

pub fn init_unet(store: &mut ParamStore, name: &str, cfg: &UnetConfig, c_in: usize, c_out: usize, rng: &mut impl Rng) {
    let levels = cfg.widths.len();
    init_double_conv(store, &format!("{name}.enc0"), c_in, cfg.widths[0], rng);
    for l in 1..=levels {
        init_double_conv(store, &format!("{name}.enc{l}"), level_width(cfg, l - 1), level_width(cfg, l), rng);
    }
    for l in (1..=levels).rev() {
        let (c_deep, c_skip) = (level_width(cfg, l), level_width(cfg, l - 1));
        init_fan_in(store, &format!("{name}.up{l}.w"), &[c_deep, c_skip, 2, 2], c_deep, 1.0, rng);
        store.insert_zeros(format!("{name}.up{l}.b"), &[c_skip]);
        init_double_conv(store, &format!("{name}.dec{l}"), 2 * c_skip, c_skip, rng);
    }
    init_pointwise(store, &format!("{name}.out"), cfg.widths[0], c_out, rng);
}

/// Shape-preserving U-Net on `x: [B, C_in, H, W]`.
pub fn unet(ctx: &mut Ctx, name: &str, cfg: &UnetConfig, x: Var) -> Result<Var> {
    let shape = ctx.g.shape(x).to_vec();
    let d = cfg.divisor();
    if shape.len() != 4 || !shape[2].is_multiple_of(d) || !shape[3].is_multiple_of(d) || shape[2] == 0 || shape[3] == 0 {
        return Err(Error::shape(format!("U-Net input {shape:?} must have spatial dims divisible by {d}")));
    }
    let levels = cfg.widths.len();
    let mut skips = Vec::with_capacity(levels);
    let mut h = double_conv(ctx, &format!("{name}.enc0"), x, cfg.pad)?;
    for l in 1..=levels {
        skips.push(h);
        h = ctx.g.max_pool2(h)?;
        h = double_conv(ctx, &format!("{name}.enc{l}"), h, cfg.pad)?;
    }
    for l in (1..=levels).rev() {
        let w = ctx.param(&format!("{name}.up{l}.w"))?;
        let b = ctx.param(&format!("{name}.up{l}.b"))?;
        h = ctx.g.conv_transpose2d(h, w, Some(b), 2)?;
        let skip = skips.pop().expect("one skip per level");
        h = ctx.g.concat(&[skip, h], 1)?;
        h = double_conv(ctx, &format!("{name}.dec{l}"), h, cfg.pad)?;
    }
    pointwise(ctx, &format!("{name}.out"), h)
}
