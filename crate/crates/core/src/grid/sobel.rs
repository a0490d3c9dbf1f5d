//! 3x3 Sobel gradient filters.

use ndarray::Array3;

use super::field::Field;
use super::resample::Boundary;
use crate::error::{Error, Result};

/// Horizontal (x, along columns) Sobel kernel, applied as a correlation.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Vertical (y, along rows) Sobel kernel.
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Returns `2C` channels ordered `[c0_x, c0_y, c1_x, c1_y, ...]`.
pub fn sobel(field: &Field, boundary: Boundary) -> Result<Field> {
    let (c, h, w) = field.dims();
    if h < 3 || w < 3 {
        return Err(Error::shape(format!("sobel needs at least 3x3, got {h}x{w}")));
    }
    let src = field.data();
    let mut out = Array3::zeros((2 * c, h, w));
    for k in 0..c {
        for i in 0..h {
            for j in 0..w {
                let (mut gx, mut gy) = (0.0, 0.0);
                for a in 0..3 {
                    let si = boundary.index(i as isize + a as isize - 1, h);
                    for b in 0..3 {
                        let sj = boundary.index(j as isize + b as isize - 1, w);
                        let v = src[[k, si, sj]];
                        gx += SOBEL_X[a][b] * v;
                        gy += SOBEL_Y[a][b] * v;
                    }
                }
                out[[2 * k, i, j]] = gx;
                out[[2 * k + 1, i, j]] = gy;
            }
        }
    }
    Field::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Sliding-window correlation with an explicitly padded copy of the input.
    fn naive(field: &Field, kernel: &[[f64; 3]; 3]) -> Array3<f64> {
        let (c, h, w) = field.dims();
        let mut padded = Array3::zeros((c, h + 2, w + 2));
        for k in 0..c {
            for i in 0..h + 2 {
                for j in 0..w + 2 {
                    padded[[k, i, j]] = field.data()[[k, (i + h - 1) % h, (j + w - 1) % w]];
                }
            }
        }
        let mut out = Array3::zeros((c, h, w));
        for k in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let window = padded.slice(ndarray::s![k, i..i + 3, j..j + 3]);
                    out[[k, i, j]] = window
                        .indexed_iter()
                        .map(|((a, b), v)| kernel[a][b] * v)
                        .sum();
                }
            }
        }
        out
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let f = Field::from_fn(2, 5, 6, |_, _, _| 3.0).unwrap();
        let g = sobel(&f, Boundary::Periodic).unwrap();
        assert_eq!(g.channels(), 4);
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ramp_gradient_off_seam() {
        let f = Field::new(Array3::from_shape_fn((1, 6, 8), |(_, _, j)| j as f64)).unwrap();
        let g = sobel(&f, Boundary::Periodic).unwrap();
        for i in 0..6 {
            for j in 1..7 {
                assert_eq!(g.data()[[0, i, j]], 8.0);
                assert_eq!(g.data()[[1, i, j]], 0.0);
            }
        }
    }

    #[test]
    fn checkerboard_matches_sliding_window() {
        let f = Field::new(Array3::from_shape_fn((1, 7, 6), |(_, i, j)| if (i + j) % 2 == 0 { 1.0 } else { -2.0 }))
            .unwrap();
        let g = sobel(&f, Boundary::Periodic).unwrap();
        let gx = naive(&f, &SOBEL_X);
        let gy = naive(&f, &SOBEL_Y);
        for i in 0..7 {
            for j in 0..6 {
                assert_eq!(g.data()[[0, i, j]], gx[[0, i, j]]);
                assert_eq!(g.data()[[1, i, j]], gy[[0, i, j]]);
            }
        }
    }

    #[test]
    fn replicate_boundary_ramp_edge() {
        let f = Field::new(Array3::from_shape_fn((1, 4, 4), |(_, _, j)| j as f64)).unwrap();
        let g = sobel(&f, Boundary::Replicate).unwrap();
        // Left edge sees (1 - 0) instead of a wrapped jump.
        assert_eq!(g.data()[[0, 2, 0]], 4.0);
    }

    #[test]
    fn too_small() {
        assert!(sobel(&Field::zeros(1, 2, 5), Boundary::Periodic).is_err());
    }

    proptest! {
        #[test]
        fn linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = Field::new(Array3::from_shape_fn((2, 5, 4), |_| rng.random_range(-1.0..1.0))).unwrap();
            let g = Field::new(Array3::from_shape_fn((2, 5, 4), |_| rng.random_range(-1.0..1.0))).unwrap();
            let combo = Field::new(f.data() * a + g.data() * b).unwrap();
            let lhs = sobel(&combo, Boundary::Periodic).unwrap();
            let rhs = sobel(&f, Boundary::Periodic).unwrap().data() * a + sobel(&g, Boundary::Periodic).unwrap().data() * b;
            for (x, y) in lhs.data().iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
