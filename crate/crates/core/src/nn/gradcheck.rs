//! Finite-difference checks of whole layers and models, covering both the
//! graph inputs and every parameter the forward pass binds.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Ctx;
use crate::autodiff::check::GradCheck;
use crate::autodiff::{ParamStore, Tensor, Var};
use crate::error::Result;

/// Compares adjoints against central differences for `inputs` and all
/// parameters of `store` used by `build` (which must return a scalar).
/// Errors are reported per tensor: inputs first, then parameters by name.
pub fn check_model_gradients<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    training: bool,
    eps: f64,
    max_probes: usize,
    seed: u64,
    build: F,
) -> Result<(GradCheck, Vec<String>)>
where
    F: Fn(&mut Ctx, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let mut ctx = Ctx::new(store, training);
        let vars: Vec<Var> = inputs.iter().map(|t| ctx.g.constant(t.clone())).collect();
        let out = build(&mut ctx, &vars)?;
        Ok(*ctx.g.real(out).first().expect("scalar"))
    };

    let mut ctx = Ctx::new(store, training);
    let vars: Vec<Var> = inputs.iter().map(|t| ctx.g.input(t.clone())).collect();
    let out = build(&mut ctx, &vars)?;
    ctx.g.backward(out)?;
    let mut names: Vec<String> = (0..inputs.len()).map(|i| format!("input{i}")).collect();
    let mut analytic: Vec<Tensor> = vars.iter().map(|&v| ctx.g.real_grad(v)).collect::<Result<_>>()?;
    for (name, v) in ctx.g.bound_params().to_vec() {
        analytic.push(ctx.g.real_grad(v)?);
        names.push(name);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work_inputs = inputs.to_vec();
    let mut work_store = store.clone();
    let mut rel_errors = Vec::with_capacity(names.len());
    let mut probed = 0;
    for (k, name) in names.iter().enumerate() {
        let n = analytic[k].len();
        let picks: Vec<usize> = if n <= max_probes { (0..n).collect() } else { sample(&mut rng, n, max_probes).into_vec() };
        let (mut d2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for idx in picks {
            let set = |inp: &mut Vec<Tensor>, st: &mut ParamStore, delta: Option<f64>, orig: f64| {
                let slot = if k < inputs.len() {
                    &mut inp[k]
                } else {
                    st.value_mut(name).expect("bound parameter")
                };
                slot.as_slice_memory_order_mut().expect("contiguous")[idx] = orig + delta.unwrap_or(0.0);
            };
            let orig = if k < inputs.len() {
                inputs[k].as_slice_memory_order().expect("contiguous")[idx]
            } else {
                store.value(name)?.as_slice_memory_order().expect("contiguous")[idx]
            };
            set(&mut work_inputs, &mut work_store, Some(eps), orig);
            let plus = eval(&work_store, &work_inputs)?;
            set(&mut work_inputs, &mut work_store, Some(-eps), orig);
            let minus = eval(&work_store, &work_inputs)?;
            set(&mut work_inputs, &mut work_store, None, orig);
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k].as_slice_memory_order().expect("contiguous")[idx];
            d2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            probed += 1;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        rel_errors.push(if scale < 1e-12 { d2.sqrt() } else { d2.sqrt() / scale });
    }
    Ok((GradCheck { rel_errors, probed }, names))
}
