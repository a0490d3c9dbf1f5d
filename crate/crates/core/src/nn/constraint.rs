//! Softmax constraint: redistributes each coarse cell value over its `N x N`
//! fine patch with softmax weights, so the pooled output reproduces the coarse
//! field exactly.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// `y[.., N i + p, N j + q] = N^2 a[.., i, j] softmax_patch(y_raw)[p, q]` for
/// `y_raw: [B, C, N H, N W]` and `a: [B, C, H, W]`.
pub fn softmax_constraint(g: &mut Graph, y_raw: Var, a: Var, n: usize) -> Result<Var> {
    let ys = g.shape(y_raw).to_vec();
    let as_ = g.shape(a).to_vec();
    if ys.len() != 4 || as_.len() != 4 || n == 0 {
        return Err(Error::shape(format!("softmax constraint on {ys:?} with coarse {as_:?}")));
    }
    let (b, c, h, w) = (as_[0], as_[1], as_[2], as_[3]);
    if ys[0] != b || ys[1] != c || ys[2] != n * h || ys[3] != n * w {
        return Err(Error::shape(format!(
            "softmax constraint: fine grid {:?} is not {n} x the coarse grid {:?}",
            &ys[2..],
            &as_[2..]
        )));
    }
    let r = g.reshape(y_raw, &[b, c, h, n, w, n])?;
    let r = g.permute(r, &[0, 1, 2, 4, 3, 5])?;
    let r = g.reshape(r, &[b, c, h, w, n * n])?;
    let s = g.softmax(r, 4)?;
    let a5 = g.reshape(a, &[b, c, h, w, 1])?;
    let a5 = g.scale(a5, (n * n) as f64)?;
    let y = g.mul(s, a5)?;
    let y = g.reshape(y, &[b, c, h, w, n, n])?;
    let y = g.permute(y, &[0, 1, 2, 4, 3, 5])?;
    g.reshape(y, &[b, c, n * h, n * w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{check_gradients, project};
    use crate::autodiff::Tensor;
    use crate::grid::{average_pool, Field};
    use ndarray::{Axis, IxDyn};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn apply(y: &Tensor, a: &Tensor, n: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let (yv, av) = (g.constant(y.clone()), g.constant(a.clone()));
        let out = softmax_constraint(&mut g, yv, av, n)?;
        Ok(g.real(out).clone())
    }

    fn pool(t: &Tensor, n: usize) -> Tensor {
        let views: Vec<Tensor> = t
            .axis_iter(Axis(0))
            .map(|b| {
                let f = Field::new(b.to_owned().into_dimensionality().unwrap()).unwrap();
                average_pool(&f, n).unwrap().into_inner().into_dyn()
            })
            .collect();
        let v: Vec<_> = views.iter().map(|t| t.view()).collect();
        ndarray::stack(Axis(0), &v).unwrap()
    }

    #[test]
    fn uniform_logits_spread_evenly() {
        let y = Tensor::zeros(IxDyn(&[1, 1, 4, 4]));
        let a = Tensor::from_elem(IxDyn(&[1, 1, 2, 2]), 2.0);
        let out = apply(&y, &a, 2).unwrap();
        assert!(out.iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn wrong_factor_is_rejected() {
        let y = Tensor::zeros(IxDyn(&[1, 1, 6, 6]));
        let a = Tensor::zeros(IxDyn(&[1, 1, 2, 2]));
        assert!(apply(&y, &a, 2).is_err());
    }

    #[test]
    fn gradients_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = Tensor::from_shape_simple_fn(IxDyn(&[2, 2, 4, 6]), || rng.random_range(-2.0..2.0));
        let a = Tensor::from_shape_simple_fn(IxDyn(&[2, 2, 2, 3]), || rng.random_range(-2.0..2.0));
        let check = check_gradients(&[y, a], 1e-5, 48, 0, |g, v| {
            let out = softmax_constraint(g, v[0], v[1], 2)?;
            project(g, out, 3)
        })
        .unwrap();
        assert!(check.max_rel_error() <= 1e-4, "{:?}", check.rel_errors);
    }

    proptest! {
        #[test]
        fn pooled_output_is_the_coarse_field(seed in any::<u64>(), k in 0usize..3, h in 1usize..4, w in 1usize..4) {
            let n = [2, 4, 8][k];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = Tensor::from_shape_simple_fn(IxDyn(&[1, 2, n * h, n * w]), || rng.random_range(-10.0..10.0));
            let a = Tensor::from_shape_simple_fn(IxDyn(&[1, 2, h, w]), || rng.random_range(-5.0..5.0));
            let out = apply(&y, &a, n).unwrap();
            let err = (&pool(&out, n) - &a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(err <= 1e-6, "{}", err);
        }
    }
}
