//! Reverse-mode differentiation over the primitive set used by the models,
//! plus the Adam optimizer.

pub mod check;
pub mod conv;
pub mod graph;
pub mod params;

pub use conv::PadMode;
pub use graph::{CTensor, Graph, Tensor, Value, Var};
pub use params::{AdamConfig, Param, ParamStore};

#[cfg(test)]
mod tests {
    use super::check::{check_gradients, project};
    use super::*;
    use crate::error::Result;
    use crate::grid::resample::{interp_matrix, Boundary, ResampleMode};
    use ndarray::{array, Array2, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    fn rand_t(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
    }

    fn gate<F>(inputs: &[Tensor], build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let res = check_gradients(inputs, EPS, usize::MAX, 0, build).unwrap();
        assert!(res.max_rel_error() <= TOL, "relative errors {:?}", res.rel_errors);
    }

    #[test]
    fn relu_values_and_mask() {
        let mut g = Graph::new();
        let x = g.input(array![-1.0, 0.0, 2.0].into_dyn());
        let y = g.relu(x).unwrap();
        assert_eq!(g.real(y), &array![0.0, 0.0, 2.0].into_dyn());
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.real_grad(x).unwrap(), array![0.0, 0.0, 1.0].into_dyn());
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.input(array![1.0, 2.0].into_dyn());
        let sq = g.square(x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.real_grad(x).unwrap(), array![2.0, 4.0].into_dyn());
    }

    #[test]
    fn elementwise_primitives() {
        let a = rand_t(&[2, 3, 4], 1);
        let b = rand_t(&[2, 3, 4], 2);
        let bias = rand_t(&[1, 3, 1], 3);
        gate(&[a.clone(), b.clone()], |g, v| {
            let s = g.add(v[0], v[1])?;
            project(g, s, 9)
        });
        gate(&[a.clone(), bias.clone()], |g, v| {
            let s = g.add(v[0], v[1])?;
            project(g, s, 9)
        });
        gate(&[a.clone(), b.clone()], |g, v| {
            let s = g.sub(v[0], v[1])?;
            project(g, s, 9)
        });
        gate(&[a.clone(), bias], |g, v| {
            let s = g.mul(v[0], v[1])?;
            project(g, s, 9)
        });
        gate(std::slice::from_ref(&a), |g, v| {
            let s = g.scale(v[0], -2.5)?;
            project(g, s, 9)
        });
        gate(std::slice::from_ref(&a), |g, v| {
            let s = g.relu(v[0])?;
            project(g, s, 9)
        });
        gate(std::slice::from_ref(&a), |g, v| {
            let s = g.gelu(v[0])?;
            project(g, s, 9)
        });
        gate(std::slice::from_ref(&a), |g, v| g.mean_abs(v[0]));
        gate(std::slice::from_ref(&a), |g, v| g.mean_square(v[0]));
        gate(&[a], |g, v| {
            let s = g.softmax(v[0], 1)?;
            project(g, s, 9)
        });
    }

    #[test]
    fn channel_primitives() {
        let x = rand_t(&[2, 3, 4, 5], 4);
        gate(&[x.clone(), rand_t(&[2, 3], 5), rand_t(&[2], 6)], |g, v| {
            let y = g.pointwise(v[0], v[1], Some(v[2]))?;
            project(g, y, 1)
        });
        gate(&[x.clone(), rand_t(&[3], 7), rand_t(&[3], 8)], |g, v| {
            let (y, _, _) = g.batchnorm_train(v[0], v[1], v[2], 1e-5)?;
            project(g, y, 2)
        });
        gate(std::slice::from_ref(&x), |g, v| {
            let y = g.channel_affine(v[0], array![1.0, -2.0, 0.5], array![0.1, 0.2, 0.3])?;
            project(g, y, 3)
        });
        gate(&[x.clone(), rand_t(&[2, 2, 4, 5], 9)], |g, v| {
            let y = g.concat(&[v[0], v[1]], 1)?;
            project(g, y, 4)
        });
        gate(std::slice::from_ref(&x), |g, v| {
            let y = g.reshape(v[0], &[6, 20])?;
            let y = g.permute(y, &[1, 0])?;
            project(g, y, 5)
        });
        gate(&[rand_t(&[2, 3, 4, 6], 22)], |g, v| {
            let y = g.max_pool2(v[0])?;
            project(g, y, 6)
        });
    }

    #[test]
    fn max_pool_rejects_odd() {
        let mut g = Graph::new();
        let x = g.input(rand_t(&[1, 1, 3, 4], 1));
        assert!(g.max_pool2(x).is_err());
    }

    #[test]
    fn convolutions() {
        let x = rand_t(&[2, 2, 5, 6], 10);
        let w = rand_t(&[3, 2, 3, 3], 11);
        let b = rand_t(&[3], 12);
        for pad in [PadMode::Valid, PadMode::Zero, PadMode::Periodic, PadMode::Replicate] {
            for stride in [1, 2] {
                gate(&[x.clone(), w.clone(), b.clone()], |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                    project(g, y, 13)
                });
            }
        }
        let x3 = rand_t(&[1, 2, 4, 4, 5], 14);
        let w3 = rand_t(&[2, 2, 3, 3, 3], 15);
        gate(&[x3, w3], |g, v| {
            let y = g.conv3d(v[0], v[1], None, 1, [PadMode::Replicate, PadMode::Periodic, PadMode::Zero])?;
            project(g, y, 16)
        });
        let wt = rand_t(&[2, 3, 2, 2], 17);
        gate(&[x, wt, rand_t(&[3], 18)], |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), 2)?;
            assert_eq!(g.shape(y), &[2, 3, 10, 12]);
            project(g, y, 19)
        });
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let x = g.input(rand_t(&[1, 2, 5, 5], 1));
        let w = g.input(rand_t(&[3, 4, 3, 3], 2));
        let err = g.conv2d(x, w, None, 1, PadMode::Zero).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 5, 5]") && err.contains("[3, 4, 3, 3]"), "{err}");
        let even = g.input(rand_t(&[3, 2, 2, 2], 2));
        assert!(g.conv2d(x, even, None, 1, PadMode::Zero).is_err());
    }

    #[test]
    fn resample_primitive() {
        let my = interp_matrix(ResampleMode::Bicubic, 4, 8, Boundary::Periodic).unwrap();
        let mx = interp_matrix(ResampleMode::Bilinear, 5, 10, Boundary::Replicate).unwrap();
        gate(&[rand_t(&[2, 1, 4, 5], 20)], |g, v| {
            let y = g.resample(v[0], my.clone(), mx.clone())?;
            project(g, y, 21)
        });
    }

    #[test]
    fn spectral_primitives() {
        let x = rand_t(&[1, 2, 8, 6], 30);
        let wr = rand_t(&[2, 3, 5, 5], 31);
        let wi = rand_t(&[2, 3, 5, 5], 32);
        gate(&[x.clone(), wr, wi], |g, v| {
            let z = g.fft2(v[0])?;
            let z = g.truncate_modes(z, &[3, 3])?;
            let w = g.complex_from_parts(v[1], v[2])?;
            let z = g.spectral_mix(z, w)?;
            let z = g.pad_modes(z, &[8, 6])?;
            let y = g.ifft2(z)?;
            project(g, y, 33)
        });
        let x3 = rand_t(&[1, 1, 5, 4, 6], 34);
        gate(&[x3], |g, v| {
            let z = g.fft3(v[0])?;
            let z = g.truncate_modes(z, &[2, 2, 2])?;
            let z = g.pad_modes(z, &[5, 4, 6])?;
            let y = g.ifft3(z)?;
            project(g, y, 35)
        });
    }

    #[test]
    fn spectral_multiplier_gradient_wrt_complex_weights() {
        // loss = || ifft2(R * fft2(x)) ||^2 with R stored as (re, im) arrays.
        let x = rand_t(&[1, 1, 6, 6], 40);
        let wr = rand_t(&[1, 1, 6, 6], 41);
        let wi = rand_t(&[1, 1, 6, 6], 42);
        let res = check_gradients(&[wr, wi], EPS, usize::MAX, 0, |g, v| {
            let xv = g.constant(x.clone());
            let z = g.fft2(xv)?;
            let r = g.complex_from_parts(v[0], v[1])?;
            let z = g.spectral_mix(z, r)?;
            let y = g.ifft2(z)?;
            let sq = g.square(y)?;
            g.sum(sq)
        })
        .unwrap();
        assert_eq!(res.rel_errors.len(), 2);
        assert!(res.max_rel_error() <= TOL, "{:?}", res.rel_errors);
    }

    #[test]
    fn truncation_rejects_modes_past_nyquist() {
        let mut g = Graph::new();
        let x = g.input(rand_t(&[1, 1, 8, 8], 1));
        let z = g.fft2(x).unwrap();
        assert!(g.truncate_modes(z, &[5, 4]).is_err());
        assert!(g.truncate_modes(z, &[4, 4]).is_ok());
    }

    #[test]
    fn two_layer_linear_chain() {
        let w1 = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let w2 = array![[1.0, -1.0, 2.0]];
        let x = array![[0.3], [0.7]];
        let mut g = Graph::new();
        let xv = g.input(x.clone().into_dyn().into_shape_with_order(IxDyn(&[1, 2, 1])).unwrap());
        let a = g.constant(w1.clone().into_dyn());
        let b = g.constant(w2.clone().into_dyn());
        let h = g.pointwise(xv, a, None).unwrap();
        let y = g.pointwise(h, b, None).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        // dL/dx = W1^T W2^T 1
        let expected: Array2<f64> = w1.t().dot(&w2.t());
        let got = g.real_grad(xv).unwrap();
        for i in 0..2 {
            assert!((got[[0, i, 0]] - expected[[i, 0]]).abs() < 1e-14);
        }
    }

    #[test]
    fn disconnected_parameter_has_zero_adjoint() {
        let mut store = ParamStore::new();
        store.insert("used", array![1.0, 2.0].into_dyn());
        store.insert("unused", array![3.0].into_dyn());
        let mut g = Graph::new();
        let u = g.param(&store, "used").unwrap();
        let _ = g.param(&store, "unused").unwrap();
        let l = g.mean_square(u).unwrap();
        g.backward(l).unwrap();
        g.write_grads(&mut store).unwrap();
        assert_eq!(store.get("unused").unwrap().grad.as_ref().unwrap(), &array![0.0].into_dyn());
        store.adam_step(&AdamConfig::default()).unwrap();
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.input(rand_t(&[3], 1));
        assert!(g.grad(x).is_err());
        assert!(g.backward(x).is_err());
        let y = g.sum(x).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(x).is_ok());
    }

    #[test]
    fn shape_mismatch_names_both() {
        let mut g = Graph::new();
        let a = g.input(rand_t(&[2, 3], 1));
        let b = g.input(rand_t(&[3, 2], 2));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let x = rand_t(&[1, 2, 6, 6], 50);
        let w = rand_t(&[2, 2, 3, 3], 51);
        let grad_of = |ca: f64, cb: f64| {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let wv = g.constant(w.clone());
            let y = g.conv2d(xv, wv, None, 1, PadMode::Periodic).unwrap();
            let y = g.gelu(y).unwrap();
            let l1 = g.mean_square(y).unwrap();
            let l2 = g.mean_abs(y).unwrap();
            let a = g.scale(l1, ca).unwrap();
            let b = g.scale(l2, cb).unwrap();
            let l = g.add(a, b).unwrap();
            g.backward(l).unwrap();
            g.real_grad(xv).unwrap()
        };
        let combined = grad_of(2.0, -3.0);
        let separate = grad_of(1.0, 0.0) * 2.0 + grad_of(0.0, 1.0) * -3.0;
        for (a, b) in combined.iter().zip(separate.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_forward_and_backward() {
        let run = || {
            let mut g = Graph::new();
            let x = g.input(rand_t(&[2, 2, 8, 8], 60));
            let z = g.fft2(x).unwrap();
            let z = g.truncate_modes(z, &[3, 3]).unwrap();
            let z = g.pad_modes(z, &[8, 8]).unwrap();
            let y = g.ifft2(z).unwrap();
            let l = g.mean_square(y).unwrap();
            g.backward(l).unwrap();
            (g.real(l).clone(), g.real_grad(x).unwrap())
        };
        let (a, ga) = run();
        let (b, gb) = run();
        assert_eq!(a, b);
        assert!(ga.iter().zip(gb.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
