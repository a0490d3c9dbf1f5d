//! Convolutions, 1x1 channel maps and the multiscale reconstruction head.

use rand::Rng;

use super::{init_fan_in, Ctx};
use crate::autodiff::{PadMode, ParamStore, Var};
use crate::error::{Error, Result};

pub fn init_pointwise(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) {
    init_fan_in(store, &format!("{name}.w"), &[c_out, c_in], c_in, 1.0, rng);
    store.insert_zeros(format!("{name}.b"), &[c_out]);
}

pub fn pointwise(ctx: &mut Ctx, name: &str, x: Var) -> Result<Var> {
    let w = ctx.param(&format!("{name}.w"))?;
    let b = ctx.param(&format!("{name}.b"))?;
    ctx.g.pointwise(x, w, Some(b))
}

/// Square `k x k` kernel with He initialization.
pub fn init_conv(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut impl Rng) {
    init_fan_in(store, &format!("{name}.w"), &[c_out, c_in, k, k], c_in * k * k, 2f64.sqrt(), rng);
    store.insert_zeros(format!("{name}.b"), &[c_out]);
}

/// Same-padded 2D convolution, stride 1.
pub fn conv(ctx: &mut Ctx, name: &str, x: Var, pad: PadMode) -> Result<Var> {
    let w = ctx.param(&format!("{name}.w"))?;
    let b = ctx.param(&format!("{name}.b"))?;
    ctx.g.conv2d(x, w, Some(b), 1, pad)
}

pub const MULTISCALE_KERNELS: [usize; 3] = [3, 5, 7];

pub fn init_multiscale(store: &mut ParamStore, name: &str, c_in: usize, branch: usize, c_out: usize, rng: &mut impl Rng) {
    for k in MULTISCALE_KERNELS {
        init_conv(store, &format!("{name}.k{k}"), c_in, branch, k, rng);
    }
    init_pointwise(store, &format!("{name}.merge"), 3 * branch, c_out, rng);
}

/// Parallel 3x3, 5x5 and 7x7 branches, concatenated over channels and merged
/// by a 1x1 convolution.
pub fn multiscale_reconstruct(ctx: &mut Ctx, name: &str, x: Var, pad: PadMode) -> Result<Var> {
    let shape = ctx.g.shape(x).to_vec();
    if shape.len() != 4 || shape[2] < 7 || shape[3] < 7 {
        return Err(Error::shape(format!("multiscale reconstruction needs [B, C, H >= 7, W >= 7], got {shape:?}")));
    }
    let mut branches = Vec::with_capacity(3);
    for k in MULTISCALE_KERNELS {
        branches.push(conv(ctx, &format!("{name}.k{k}"), x, pad)?);
    }
    let cat = ctx.g.concat(&branches, 1)?;
    pointwise(ctx, &format!("{name}.merge"), cat)
}
