//! Differentiable layers assembled into the model zoo.
//!
//! Layers are plain functions over a [`Ctx`], which owns the graph being
//! built and reads parameters by name from a [`ParamStore`]. Each layer has
//! a matching `init_*` function that registers its parameters.

pub mod constraint;
pub mod gradcheck;
pub mod layers;
pub mod spectral;
pub mod unet;
pub mod upsample;

use ndarray::Array1;
use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::Result;

pub use constraint::softmax_constraint;
pub use layers::{conv, init_conv, init_multiscale, init_pointwise, multiscale_reconstruct, pointwise};
pub use spectral::{fourier_block, init_fourier_block, init_spectral, spectral_conv, SpectralWeights};
pub use unet::{init_unet, unet, UnetConfig};
pub use upsample::{init_meta_upsample, upsample_block, UpsampleMode};

/// Forward-pass state: the graph under construction plus running-statistic
/// updates produced by batch normalization in training mode.
pub struct Ctx<'a> {
    pub g: Graph,
    pub store: &'a ParamStore,
    pub training: bool,
    pub bn_updates: Vec<(String, Array1<f64>, Array1<f64>)>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, training: bool) -> Self {
        Self { g: Graph::new(), store, training, bn_updates: Vec::new() }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        self.g.param(self.store, name)
    }
}

/// Gaussian weights with standard deviation `gain / sqrt(fan_in)`.
pub(crate) fn init_fan_in(store: &mut ParamStore, name: &str, shape: &[usize], fan_in: usize, gain: f64, rng: &mut impl Rng) {
    store.insert_normal(name, shape, gain / (fan_in.max(1) as f64).sqrt(), rng);
}
