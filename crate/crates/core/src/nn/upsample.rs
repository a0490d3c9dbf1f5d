//! Upsampling blocks: fixed bicubic, or a learned softmax mixture of the
//! nearest, bilinear and bicubic kernels.

use serde::{Deserialize, Serialize};

use super::Ctx;
use crate::autodiff::{ParamStore, Var};
use crate::error::{Error, Result};
use crate::grid::resample::interp_matrix;
use crate::grid::{Boundary, ResampleMode};

/// Kernel order of the meta mixture logits.
pub const META_KERNELS: [ResampleMode; 3] = [ResampleMode::Nearest, ResampleMode::Bilinear, ResampleMode::Bicubic];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    Plain,
    Meta,
}

pub fn init_meta_upsample(store: &mut ParamStore, name: &str) {
    store.insert_zeros(format!("{name}.logits"), &[3]);
}

/// Softmax mixture weights stored under `name`.
pub fn meta_weights(store: &ParamStore, name: &str) -> Result<Vec<f64>> {
    let l = store.value(&format!("{name}.logits"))?;
    let m = l.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

fn interp(ctx: &mut Ctx, x: Var, mode: ResampleMode, target: (usize, usize), boundary: Boundary) -> Result<Var> {
    let s = ctx.g.shape(x).to_vec();
    let n = s.len();
    if (s[n - 2], s[n - 1]) == target && mode != ResampleMode::AveragePool {
        return Ok(x);
    }
    let my = interp_matrix(mode, s[n - 2], target.0, boundary)?;
    let mx = interp_matrix(mode, s[n - 1], target.1, boundary)?;
    ctx.g.resample(x, my, mx)
}

/// Interpolates the trailing two axes of `x` up to `target`.
pub fn upsample_block(
    ctx: &mut Ctx,
    name: &str,
    x: Var,
    target: (usize, usize),
    mode: UpsampleMode,
    boundary: Boundary,
) -> Result<Var> {
    let shape = ctx.g.shape(x).to_vec();
    let n = shape.len();
    if n < 3 {
        return Err(Error::shape(format!("upsampling needs spatial axes, got {shape:?}")));
    }
    if target.0 < shape[n - 2] || target.1 < shape[n - 1] {
        return Err(Error::invalid(format!(
            "upsample target {}x{} is smaller than the input {}x{}",
            target.0,
            target.1,
            shape[n - 2],
            shape[n - 1]
        )));
    }
    match mode {
        UpsampleMode::Plain => interp(ctx, x, ResampleMode::Bicubic, target, boundary),
        UpsampleMode::Meta => {
            // Stack the three interpolants on a new axis 1 and mix them with a
            // 1x1 channel map whose weights are softmax(logits).
            let mut lifted_shape = shape.clone();
            lifted_shape[n - 2] = target.0;
            lifted_shape[n - 1] = target.1;
            let mut stacked_shape = vec![shape[0], 1];
            stacked_shape.extend(&lifted_shape[1..]);
            let mut parts = Vec::with_capacity(3);
            for mode in META_KERNELS {
                let y = interp(ctx, x, mode, target, boundary)?;
                parts.push(ctx.g.reshape(y, &stacked_shape)?);
            }
            let stacked = ctx.g.concat(&parts, 1)?;
            let logits = ctx.param(&format!("{name}.logits"))?;
            let w = ctx.g.softmax(logits, 0)?;
            let w = ctx.g.reshape(w, &[1, 3])?;
            let mixed = ctx.g.pointwise(stacked, w, None)?;
            ctx.g.reshape(mixed, &lifted_shape)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::project;
    use crate::autodiff::Tensor;
    use crate::grid::{upsample, Field};
    use crate::nn::gradcheck::check_model_gradients;
    use ndarray::{Axis, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
    }

    fn run(store: &ParamStore, x: &Tensor, mode: UpsampleMode, target: (usize, usize)) -> Result<Tensor> {
        let mut ctx = Ctx::new(store, false);
        let xv = ctx.g.input(x.clone());
        let y = upsample_block(&mut ctx, "up", xv, target, mode, Boundary::Periodic)?;
        Ok(ctx.g.real(y).clone())
    }

    fn reference(x: &Tensor, mode: ResampleMode, target: (usize, usize)) -> Tensor {
        let f = Field::new(x.index_axis(Axis(0), 0).to_owned().into_dimensionality().unwrap()).unwrap();
        upsample(&f, mode, target).unwrap().into_inner().insert_axis(Axis(0)).into_dyn()
    }

    #[test]
    fn plain_is_bicubic() {
        let x = random(&[1, 2, 4, 4], 1);
        let y = run(&ParamStore::new(), &x, UpsampleMode::Plain, (8, 12)).unwrap();
        assert_eq!(y, reference(&x, ResampleMode::Bicubic, (8, 12)));
    }

    #[test]
    fn equal_logits_average_the_kernels() {
        let mut s = ParamStore::new();
        init_meta_upsample(&mut s, "up");
        let x = random(&[1, 2, 4, 4], 2);
        let y = run(&s, &x, UpsampleMode::Meta, (8, 8)).unwrap();
        let mut expected = Tensor::zeros(y.raw_dim());
        for m in META_KERNELS {
            expected = expected + reference(&x, m, (8, 8)) / 3.0;
        }
        let err = (&y - &expected).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12, "{err}");
        let w = meta_weights(&s, "up").unwrap();
        assert!(w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn saturated_logits_select_nearest() {
        let mut s = ParamStore::new();
        s.insert("up.logits", ndarray::arr1(&[30.0, -30.0, -30.0]).into_dyn());
        let x = random(&[1, 1, 4, 4], 3);
        let y = run(&s, &x, UpsampleMode::Meta, (16, 16)).unwrap();
        let err = (&y - &reference(&x, ResampleMode::Nearest, (16, 16))).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn shrinking_target_is_rejected() {
        let x = random(&[1, 1, 8, 8], 4);
        assert!(run(&ParamStore::new(), &x, UpsampleMode::Plain, (4, 8)).is_err());
    }

    #[test]
    fn meta_gradients() {
        let mut s = ParamStore::new();
        s.insert("up.logits", ndarray::arr1(&[0.3, -0.2, 0.5]).into_dyn());
        let x = random(&[2, 2, 4, 4], 5);
        let (check, _) = check_model_gradients(&s, &[x], false, 1e-5, 50, 3, |ctx, v| {
            let y = upsample_block(ctx, "up", v[0], (8, 8), UpsampleMode::Meta, Boundary::Periodic)?;
            project(&mut ctx.g, y, 2)
        })
        .unwrap();
        assert!(check.max_rel_error() <= 1e-4, "{:?}", check.rel_errors);
    }

    proptest::proptest! {
        #[test]
        fn mixture_weights_are_a_distribution(l in proptest::collection::vec(-15.0f64..15.0, 3)) {
            let mut s = ParamStore::new();
            s.insert("up.logits", ndarray::Array1::from(l).into_dyn());
            let w = meta_weights(&s, "up").unwrap();
            proptest::prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            proptest::prop_assert!(w.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
