//! The model zoo: operator-based downscalers, their temporal variants and the
//! U-Net baselines.

pub mod adapter;
pub mod spec;

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{PadMode, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::grid::sobel::{SOBEL_X, SOBEL_Y};
use crate::grid::Boundary;
use crate::nn::{self, Ctx, UpsampleMode};

pub use adapter::{cross_factor, AdapterMethod};
pub use spec::{ModelSpec, Preprocess, Reconstruction, Variant};

/// Outputs at each requested resolution, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub model: String,
    pub input_resolution: (usize, usize),
    pub outputs: Vec<((usize, usize), Tensor)>,
}

impl Prediction {
    pub fn get(&self, res: (usize, usize)) -> Option<&Tensor> {
        self.outputs.iter().find(|(r, _)| *r == res).map(|(_, t)| t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

fn pad_for(boundary: Boundary) -> PadMode {
    match boundary {
        Boundary::Periodic => PadMode::Periodic,
        Boundary::Replicate => PadMode::Replicate,
    }
}

impl Model {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let s = &spec;
        if s.variant.is_cnn() {
            nn::init_unet(&mut p, "unet", &s.unet, s.in_channels, s.out_channels, &mut rng);
            return Ok(Self { spec, params: p });
        }
        let c_in = match s.preprocess {
            Preprocess::None => s.in_channels,
            Preprocess::Sobel => 3 * s.in_channels,
        };
        nn::init_pointwise(&mut p, "lift", c_in, s.width, &mut rng);
        if s.upsample == UpsampleMode::Meta {
            nn::init_meta_upsample(&mut p, "up");
        }
        init_stack(&mut p, "ops", s, &mut rng);
        init_reconstruction(&mut p, "rec", s, &mut rng);
        if s.variant.has_residual() {
            nn::init_pointwise(&mut p, "res.lift", s.width + s.out_channels, s.width, &mut rng);
            init_stack(&mut p, "res.ops", s, &mut rng);
            init_reconstruction(&mut p, "res.rec", s, &mut rng);
            // The residual starts at exactly zero.
            let last = if s.reconstruction == Reconstruction::Multiscale { "res.rec.merge.w" } else { "res.rec.p2.w" };
            p.value_mut(last)?.fill(0.0);
        }
        Ok(Self { spec, params: p })
    }

    pub fn name(&self) -> &'static str {
        self.spec.variant.tag()
    }

    /// Builds the forward graph for each requested output resolution.
    ///
    /// Static inputs are `[B, C, H, W]`; temporal inputs are `[B, C, T, H, W]`
    /// and yield `[B, C, T, H', W']` per target.
    pub fn forward(&self, ctx: &mut Ctx, x: Var, targets: &[(usize, usize)]) -> Result<Vec<Var>> {
        let s = &self.spec;
        let shape = ctx.g.shape(x).to_vec();
        let rank = if s.variant.is_temporal() { 5 } else { 4 };
        if shape.len() != rank || shape[1] != s.in_channels {
            return Err(Error::shape(format!(
                "{} expects [B, {}, {}H, W], got {shape:?}",
                s.variant,
                s.in_channels,
                if rank == 5 { "T, " } else { "" }
            )));
        }
        if s.variant.is_temporal() && shape[2] != s.window {
            return Err(Error::shape(format!("{} expects {} input frames, got {}", s.variant, s.window, shape[2])));
        }
        let (h, w) = (shape[rank - 2], shape[rank - 1]);
        if targets.is_empty() {
            return Err(Error::invalid("no output resolution requested"));
        }
        for &(th, tw) in targets {
            if th < h || tw < w {
                return Err(Error::invalid(format!("target {th}x{tw} is below the input resolution {h}x{w}")));
            }
        }
        if s.variant.is_cnn() {
            return targets.iter().map(|&t| self.cnn_forward(ctx, x, t)).collect();
        }

        let inp = match s.preprocess {
            Preprocess::None => x,
            Preprocess::Sobel => {
                let grads = sobel_graph(ctx, x, s.in_channels, s.boundary)?;
                ctx.g.concat(&[x, grads], 1)?
            }
        };
        let lifted = nn::pointwise(ctx, "lift", inp)?;
        let mut outs = Vec::with_capacity(targets.len());
        for &target in targets {
            let e = nn::upsample_block(ctx, "up", lifted, target, s.upsample, s.boundary)?;
            let z = self.stack(ctx, "ops", e)?;
            let mut y = self.reconstruct(ctx, "rec", z)?;
            if s.variant.has_residual() {
                let cat = ctx.g.concat(&[e, y], 1)?;
                let r = nn::pointwise(ctx, "res.lift", cat)?;
                let r = self.stack(ctx, "res.ops", r)?;
                let r = self.reconstruct(ctx, "res.rec", r)?;
                y = ctx.g.add(y, r)?;
            }
            if s.constraint {
                if target.0 % h != 0 || target.1 % w != 0 || target.0 / h != target.1 / w {
                    return Err(Error::invalid(format!(
                        "constraint needs one integer factor on both axes, got {h}x{w} -> {}x{}",
                        target.0, target.1
                    )));
                }
                y = nn::softmax_constraint(&mut ctx.g, y, x, target.0 / h)?;
            }
            outs.push(y);
        }
        Ok(outs)
    }

    fn stack(&self, ctx: &mut Ctx, name: &str, mut z: Var) -> Result<Var> {
        let blocks = self.spec.blocks;
        for i in 0..blocks {
            z = nn::fourier_block(ctx, &format!("{name}.{i}"), z, &self.spec.modes, i + 1 < blocks)?;
        }
        Ok(z)
    }

    fn reconstruct(&self, ctx: &mut Ctx, name: &str, z: Var) -> Result<Var> {
        match self.spec.reconstruction {
            Reconstruction::Pointwise => {
                let h = nn::pointwise(ctx, &format!("{name}.p1"), z)?;
                let h = ctx.g.gelu(h)?;
                nn::pointwise(ctx, &format!("{name}.p2"), h)
            }
            Reconstruction::Multiscale => nn::multiscale_reconstruct(ctx, name, z, pad_for(self.spec.boundary)),
        }
    }

    fn cnn_forward(&self, ctx: &mut Ctx, x: Var, target: (usize, usize)) -> Result<Var> {
        let f = self.spec.variant.cnn_factor().expect("cnn variant");
        let shape = ctx.g.shape(x).to_vec();
        if target != (f * shape[2], f * shape[3]) {
            return Err(Error::invalid(format!(
                "{} is trained for {f}x; use a cross-factor adapter for {}x{} -> {}x{}",
                self.spec.variant, shape[2], shape[3], target.0, target.1
            )));
        }
        let up = nn::upsample_block(ctx, "bicubic", x, target, UpsampleMode::Plain, self.spec.boundary)?;
        nn::unet(ctx, "unet", &self.spec.unet, up)
    }

    /// Inference on a batch, at every requested resolution.
    pub fn predict(&self, x: &Tensor, targets: &[(usize, usize)]) -> Result<Prediction> {
        let mut ctx = Ctx::new(&self.params, false);
        let xv = ctx.g.constant(x.clone());
        let outs = self.forward(&mut ctx, xv, targets)?;
        let mut outputs = Vec::with_capacity(outs.len());
        for (&t, v) in targets.iter().zip(outs) {
            let y = ctx.g.real(v).clone();
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("{} produced non-finite values at {}x{}", self.name(), t.0, t.1)));
            }
            outputs.push((t, y));
        }
        let n = x.ndim();
        Ok(Prediction { model: self.name().to_string(), input_resolution: (x.shape()[n - 2], x.shape()[n - 1]), outputs })
    }

    /// Softmax mixture weights of the meta upsampler, if the model has one.
    pub fn mixture_weights(&self) -> Option<Vec<f64>> {
        (self.spec.upsample == UpsampleMode::Meta && !self.spec.variant.is_cnn())
            .then(|| nn::upsample::meta_weights(&self.params, "up").ok())
            .flatten()
    }
}

fn init_stack(p: &mut ParamStore, name: &str, s: &ModelSpec, rng: &mut ChaCha8Rng) {
    for i in 0..s.blocks {
        nn::init_fourier_block(p, &format!("{name}.{i}"), s.width, &s.modes, rng);
    }
}

fn init_reconstruction(p: &mut ParamStore, name: &str, s: &ModelSpec, rng: &mut ChaCha8Rng) {
    match s.reconstruction {
        Reconstruction::Pointwise => {
            nn::init_pointwise(p, &format!("{name}.p1"), s.width, s.width, rng);
            nn::init_pointwise(p, &format!("{name}.p2"), s.width, s.out_channels, rng);
        }
        Reconstruction::Multiscale => nn::init_multiscale(p, name, s.width, s.width, s.out_channels, rng),
    }
}

/// Per-channel Sobel gradients as a fixed convolution, `[c_x, c_y]` per channel.
fn sobel_graph(ctx: &mut Ctx, x: Var, channels: usize, boundary: Boundary) -> Result<Var> {
    let mut w = Array4::<f64>::zeros((2 * channels, channels, 3, 3));
    for c in 0..channels {
        for a in 0..3 {
            for b in 0..3 {
                w[[2 * c, c, a, b]] = SOBEL_X[a][b];
                w[[2 * c + 1, c, a, b]] = SOBEL_Y[a][b];
            }
        }
    }
    let wv = ctx.g.constant(w.into_dyn());
    ctx.g.conv2d(x, wv, None, 1, pad_for(boundary))
}
