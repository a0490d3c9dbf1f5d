//! Central finite-difference gradient checking.
//!
//! The check only ever evaluates forward passes, so it is independent of the
//! adjoint rules it validates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Tensor, Var};
use crate::error::Result;

/// Per-input outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` per input, over
    /// the probed coordinates.
    pub rel_errors: Vec<f64>,
    pub probed: usize,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares backward adjoints of `inputs` against central differences with step `eps`.
///
/// `build` must map the input leaves to a scalar. At most `max_probes`
/// coordinates per input are perturbed (sampled with `seed`); pass
/// `usize::MAX` to probe every coordinate.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, max_probes: usize, seed: u64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(*g.real(out).first().expect("scalar"))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.real_grad(v)).collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut probed = 0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        let picks: Vec<usize> = if n <= max_probes {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_probes).into_vec()
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for idx in picks {
            let orig = input.as_slice_memory_order().expect("contiguous")[idx];
            work[k].as_slice_memory_order_mut().expect("contiguous")[idx] = orig + eps;
            let plus = eval(&work)?;
            work[k].as_slice_memory_order_mut().expect("contiguous")[idx] = orig - eps;
            let minus = eval(&work)?;
            work[k].as_slice_memory_order_mut().expect("contiguous")[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k].as_slice_memory_order().expect("contiguous")[idx];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            probed += 1;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        rel_errors.push(if scale < 1e-12 { diff2.sqrt() } else { diff2.sqrt() / scale });
    }
    Ok(GradCheck { rel_errors, probed })
}

/// Fixed random weights for turning a tensor output into a scalar loss.
pub fn projection_weights(shape: &[usize], seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_shape_simple_fn(ndarray::IxDyn(shape), || rng.random_range(-1.0..1.0))
}

/// `sum(out * r)` with `r` from [`projection_weights`].
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let r = projection_weights(g.shape(out), seed);
    let r = g.constant(r);
    let prod = g.mul(out, r)?;
    g.sum(prod)
}
