//! Truncated Fourier-mode convolutions and the Fourier block.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::{init_fan_in, Ctx};
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::grid::Field;

/// Complex weights `R` over the kept modes, stored as real and imaginary parts
/// of shape `[C_in, C_out, 2 m_1 - 1, ..]` (frequencies in FFT order).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralWeights {
    pub re: Tensor,
    pub im: Tensor,
    pub modes: Vec<usize>,
}

impl SpectralWeights {
    pub fn zeros(c_in: usize, c_out: usize, modes: &[usize]) -> Self {
        let mut shape = vec![c_in, c_out];
        shape.extend(modes.iter().map(|&m| 2 * m - 1));
        Self { re: Tensor::zeros(IxDyn(&shape)), im: Tensor::zeros(IxDyn(&shape)), modes: modes.to_vec() }
    }

    /// Identity multiplier on every kept mode (square channel count).
    pub fn identity(channels: usize, modes: &[usize]) -> Self {
        let mut w = Self::zeros(channels, channels, modes);
        for c in 0..channels {
            w.re.index_axis_mut(ndarray::Axis(0), c).index_axis_mut(ndarray::Axis(0), c).fill(1.0);
        }
        w
    }

    /// Applies the multiplier to every channel group of a field.
    pub fn apply_field(&self, x: &Field) -> Result<Field> {
        let mut g = Graph::new();
        let xv = g.constant(x.data().clone().insert_axis(ndarray::Axis(0)).into_dyn());
        let re = g.constant(self.re.clone());
        let im = g.constant(self.im.clone());
        let y = spectral_conv_vars(&mut g, xv, re, im, &self.modes)?;
        let out = g.real(y).index_axis(ndarray::Axis(0), 0).to_owned();
        Field::new(out.into_dimensionality().map_err(|e| Error::shape(e.to_string()))?)
    }
}

pub fn init_spectral(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, modes: &[usize], rng: &mut impl Rng) {
    let mut shape = vec![c_in, c_out];
    shape.extend(modes.iter().map(|&m| 2 * m - 1));
    let scale = 1.0 / (c_in * c_out) as f64;
    for part in ["re", "im"] {
        let t = ArrayD::from_shape_simple_fn(IxDyn(&shape), || scale * rng.random::<f64>());
        store.insert(format!("{name}.{part}"), t);
    }
}

/// `ifft(pad(R . truncate(fft(x))))` over the trailing `modes.len()` axes of
/// `x: [B, C_in, ..]`.
pub fn spectral_conv(ctx: &mut Ctx, name: &str, x: Var, modes: &[usize]) -> Result<Var> {
    let re = ctx.param(&format!("{name}.re"))?;
    let im = ctx.param(&format!("{name}.im"))?;
    spectral_conv_vars(&mut ctx.g, x, re, im, modes)
}

pub(crate) fn spectral_conv_vars(g: &mut Graph, x: Var, re: Var, im: Var, modes: &[usize]) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let naxes = modes.len();
    if shape.len() < 2 + naxes {
        return Err(Error::shape(format!("spectral conv over {naxes} axes of input {shape:?}")));
    }
    let full = shape[shape.len() - naxes..].to_vec();
    for (&m, &n) in modes.iter().zip(&full) {
        if 2 * m > n {
            return Err(Error::shape(format!("{m} modes exceed the Nyquist limit of a grid of size {n} (input {shape:?})")));
        }
    }
    let z = g.to_complex(x)?;
    let zf = g.fft(z, naxes, false)?;
    let zt = g.truncate_modes(zf, modes)?;
    let w = g.complex_from_parts(re, im)?;
    let mixed = g.spectral_mix(zt, w)?;
    let padded = g.pad_modes(mixed, &full)?;
    let y = g.fft(padded, naxes, true)?;
    g.real_part(y)
}

pub fn init_fourier_block(store: &mut ParamStore, name: &str, width: usize, modes: &[usize], rng: &mut impl Rng) {
    init_spectral(store, &format!("{name}.spec"), width, width, modes, rng);
    init_fan_in(store, &format!("{name}.w"), &[width, width], width, 1.0, rng);
    store.insert_zeros(format!("{name}.b"), &[width]);
}

/// `gelu(spectral_conv(x) + W x + b)`; `activate = false` drops the GELU.
pub fn fourier_block(ctx: &mut Ctx, name: &str, x: Var, modes: &[usize], activate: bool) -> Result<Var> {
    let s = spectral_conv(ctx, &format!("{name}.spec"), x, modes)?;
    let w = ctx.param(&format!("{name}.w"))?;
    let b = ctx.param(&format!("{name}.b"))?;
    let p = ctx.g.pointwise(x, w, Some(b))?;
    let y = ctx.g.add(s, p)?;
    if activate {
        ctx.g.gelu(y)
    } else {
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{check_gradients, project};
    use crate::grid::average_pool;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn band_limited(n: usize, channels: usize) -> Field {
        Field::from_fn(channels, n, n, |c, x, y| {
            let c = c as f64 + 1.0;
            (2.0 * PI * x).sin() * c + (2.0 * PI * (2.0 * x + y)).cos() - 0.5 * (2.0 * PI * 3.0 * y).sin() + 0.2
        })
        .unwrap()
    }

    #[test]
    fn identity_multiplier_preserves_band_limited_input() {
        let x = band_limited(32, 2);
        let y = SpectralWeights::identity(2, &[6, 6]).apply_field(&x).unwrap();
        let err = (y.data() - x.data()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn zero_multiplier_annihilates() {
        let y = SpectralWeights::zeros(2, 3, &[4, 4]).apply_field(&band_limited(16, 2)).unwrap();
        assert_eq!(y.channels(), 3);
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn too_many_modes_is_rejected() {
        let err = SpectralWeights::zeros(1, 1, &[9, 9]).apply_field(&band_limited(16, 1)).unwrap_err();
        assert!(err.to_string().contains("Nyquist"), "{err}");
    }

    #[test]
    fn outputs_agree_across_resolutions() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        init_spectral(&mut store, "s", 2, 2, &[5, 5], &mut rng);
        let w = SpectralWeights {
            re: store.value("s.re").unwrap().clone(),
            im: store.value("s.im").unwrap().clone(),
            modes: vec![5, 5],
        };
        let fine = band_limited(64, 2);
        let coarse = average_pool(&fine, 2).unwrap();
        let y_fine = average_pool(&w.apply_field(&fine).unwrap(), 2).unwrap();
        let y_coarse = w.apply_field(&coarse).unwrap();
        let err = (y_fine.data() - y_coarse.data()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-6, "{err}");
        assert!(y_coarse.max_abs() > 1e-3);
    }

    fn block_store(width: usize, modes: &[usize]) -> ParamStore {
        let mut store = ParamStore::new();
        init_fourier_block(&mut store, "fb", width, modes, &mut ChaCha8Rng::seed_from_u64(1));
        store
    }

    #[test]
    fn fourier_block_shapes_and_zero_input() {
        let store = block_store(3, &[2, 2]);
        let mut ctx = Ctx::new(&store, false);
        let x = ctx.g.input(Tensor::zeros(IxDyn(&[2, 3, 8, 8])));
        let mut y = x;
        for _ in 0..3 {
            y = fourier_block(&mut ctx, "fb", y, &[2, 2], true).unwrap();
        }
        assert_eq!(ctx.g.shape(y), &[2, 3, 8, 8]);
        // Zero input and zero bias give zero output through GELU.
        assert!(ctx.g.real(y).iter().all(|v| v.is_finite() && *v == 0.0));
        let mut ctx = Ctx::new(&store, false);
        let x = ctx.g.input(Tensor::zeros(IxDyn(&[1, 2, 8, 8])));
        assert!(fourier_block(&mut ctx, "fb", x, &[2, 2], true).is_err());
    }

    #[test]
    fn fourier_block_gradients() {
        for modes in [vec![2, 3], vec![2, 2, 2]] {
            let store = block_store(2, &modes);
            let mut shape = vec![1, 2];
            shape.extend(if modes.len() == 2 { vec![6, 8] } else { vec![4, 4, 6] });
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let x = Tensor::from_shape_simple_fn(IxDyn(&shape), || rng.random_range(-1.0..1.0));
            let names = ["fb.spec.re", "fb.spec.im", "fb.w", "fb.b"];
            let mut inputs = vec![x];
            inputs.extend(names.iter().map(|n| store.value(n).unwrap().clone()));
            let check = check_gradients(&inputs, 1e-5, 40, 9, |g, v| {
                let s = spectral_conv_vars(g, v[0], v[1], v[2], &modes)?;
                let p = g.pointwise(v[0], v[3], Some(v[4]))?;
                let y = g.add(s, p)?;
                let y = g.gelu(y)?;
                project(g, y, 4)
            })
            .unwrap();
            assert!(check.max_rel_error() <= 1e-4, "{modes:?}: {:?}", check.rel_errors);
        }
    }
}
