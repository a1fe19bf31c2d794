//! Channel-wise layer normalization and the SiLU activation.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Scale-only affine parameters of [`layer_norm_channels`].
#[derive(Clone, Copy, Debug)]
pub struct NormWeight<'a, T> {
    pub gamma: &'a [T],
    pub eps: T,
}

impl<'a, T: Real> NormWeight<'a, T> {
    pub fn new(gamma: &'a [T]) -> Self {
        NormWeight {
            gamma,
            eps: T::lit(LAYER_NORM_EPS),
        }
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if self.gamma.len() != x.c() {
            return Err(Error::shape(
                "layer_norm_channels",
                &x.dims(),
                &[self.gamma.len()],
            ));
        }
        if !(self.eps > T::zero()) {
            return Err(Error::config("layer norm eps must be positive"));
        }
        Ok(())
    }
}

/// Per-pixel mean and inverse standard deviation across channels of batch item `i`.
fn moments<T: Real>(x: &Tensor4<T>, i: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let (c, p) = (x.c(), x.shape().plane());
    let inv_c = T::one() / T::lit(c as f64);
    let mut mean = vec![T::zero(); p];
    for j in 0..c {
        for (m, &v) in mean.iter_mut().zip(x.plane(i, j)) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m * inv_c);
    let mut var = vec![T::zero(); p];
    for j in 0..c {
        for ((s, &v), &m) in var.iter_mut().zip(x.plane(i, j)).zip(&mean) {
            let d = v - m;
            *s = *s + d * d;
        }
    }
    let rstd = var
        .into_iter()
        .map(|s| T::one() / (s * inv_c + eps).sqrt())
        .collect();
    (mean, rstd)
}

/// Normalizes the channel vector at every pixel to zero mean and unit
/// population variance, then scales channel `j` by `gamma[j]`.
pub fn layer_norm_channels<T: Real>(x: &Tensor4<T>, w: &NormWeight<'_, T>) -> Result<Tensor4<T>> {
    w.check(x)?;
    let mut out = Tensor4::zeros(x.shape());
    for i in 0..x.n() {
        let (mean, rstd) = moments(x, i, w.eps);
        for (j, &g) in w.gamma.iter().enumerate() {
            let src = x.plane(i, j);
            let dst = out.plane_mut(i, j);
            for (((d, &v), &m), &r) in dst.iter_mut().zip(src).zip(&mean).zip(&rstd) {
                *d = (v - m) * r * g;
            }
        }
    }
    Ok(out)
}

/// Returns `(d input, d gamma)`.
pub fn layer_norm_vjp<T: Real>(
    x: &Tensor4<T>,
    w: &NormWeight<'_, T>,
    gy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>)> {
    w.check(x)?;
    if gy.shape() != x.shape() {
        return Err(Error::shape("layer_norm_vjp", &x.dims(), &gy.dims()));
    }
    let (c, p) = (x.c(), x.shape().plane());
    let inv_c = T::one() / T::lit(c as f64);
    let mut gx = Tensor4::zeros(x.shape());
    let mut ggamma = vec![T::zero(); c];
    for i in 0..x.n() {
        let (mean, rstd) = moments(x, i, w.eps);
        // Per-pixel means of g and g * xhat where g = gy * gamma.
        let mut mg = vec![T::zero(); p];
        let mut mgx = vec![T::zero(); p];
        for j in 0..c {
            let gj = w.gamma[j];
            let mut acc = T::zero();
            for (q, (&v, &dy)) in x.plane(i, j).iter().zip(gy.plane(i, j)).enumerate() {
                let xhat = (v - mean[q]) * rstd[q];
                acc = acc + dy * xhat;
                let g = dy * gj;
                mg[q] = mg[q] + g;
                mgx[q] = mgx[q] + g * xhat;
            }
            ggamma[j] = ggamma[j] + acc;
        }
        for j in 0..c {
            let gj = w.gamma[j];
            let src = x.plane(i, j);
            let dys = gy.plane(i, j);
            let dst = gx.plane_mut(i, j);
            for q in 0..p {
                let xhat = (src[q] - mean[q]) * rstd[q];
                let g = dys[q] * gj;
                dst[q] = rstd[q] * (g - mg[q] * inv_c - xhat * mgx[q] * inv_c);
            }
        }
    }
    Ok((gx, ggamma))
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn silu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| v * sigmoid(v))
}

pub fn silu_vjp<T: Real>(x: &Tensor4<T>, gy: &Tensor4<T>) -> Result<Tensor4<T>> {
    if gy.shape() != x.shape() {
        return Err(Error::shape("silu_vjp", &x.dims(), &gy.dims()));
    }
    let data = x
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (T::one() + v * (T::one() - s))
        })
        .collect();
    Tensor4::from_vec(x.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_pixel_vector_normalizes_to_zero() {
        let x = Tensor4::from_fn(Shape::new(1, 5, 3, 3), |_, _, y, x| {
            0.1 + (y * 3 + x) as f64
        });
        let gamma = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = layer_norm_channels(&x, &NormWeight::new(&gamma)).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn hand_computed_three_channels() {
        let x = Tensor4::from_vec(Shape::new(1, 3, 1, 1), vec![1.0, 2.0, 3.0]).unwrap();
        let gamma = [1.0; 3];
        let w = NormWeight {
            gamma: &gamma,
            eps: 1e-12,
        };
        let y = layer_norm_channels(&x, &w).unwrap();
        let expected: [f64; 3] = [-1.2247, 0.0, 1.2247];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn unit_statistics_per_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor4::from_fn(Shape::new(2, 16, 4, 4), |_, _, _, _| {
            rng.gen_range(-3.0..3.0)
        });
        let gamma = [1.0; 16];
        let y = layer_norm_channels(&x, &NormWeight::new(&gamma)).unwrap();
        for i in 0..2 {
            for py in 0..4 {
                for px in 0..4 {
                    let v: Vec<f64> = (0..16).map(|j| y.at(i, j, py, px)).collect();
                    let m = v.iter().sum::<f64>() / 16.0;
                    let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 16.0;
                    assert!(m.abs() < 1e-5);
                    assert!((var - 1.0).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn shift_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor4::from_fn(Shape::new(1, 8, 3, 3), |_, _, _, _| {
            rng.gen_range(-1.0..1.0)
        });
        let gamma: Vec<f64> = (0..8).map(|j| 0.5 + j as f64 * 0.1).collect();
        let w = NormWeight::new(&gamma);
        let base = layer_norm_channels(&x, &w).unwrap();
        let shifted = Tensor4::from_fn(x.shape(), |i, j, y, xx| {
            x.at(i, j, y, xx) + (y * 3 + xx) as f64 * 0.7
        });
        assert!(
            layer_norm_channels(&shifted, &w)
                .unwrap()
                .max_abs_diff(&base)
                < 1e-6
        );
        let scaled = Tensor4::from_fn(x.shape(), |i, j, y, xx| {
            x.at(i, j, y, xx) * (1.0 + (y + xx) as f64)
        });
        assert!(
            layer_norm_channels(&scaled, &w)
                .unwrap()
                .max_abs_diff(&base)
                < 1e-4
        );
    }

    #[test]
    fn gamma_length_mismatch() {
        let x = Tensor4::<f32>::zeros(Shape::new(1, 4, 2, 2));
        let gamma = [1.0f32; 3];
        assert!(matches!(
            layer_norm_channels(&x, &NormWeight::new(&gamma)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn silu_values() {
        let x = Tensor4::from_vec(Shape::new(1, 1, 1, 4), vec![0.0, 1.0, 20.0, -20.0]).unwrap();
        let y = silu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert!((y.data()[1] - 0.731059).abs() < 1e-6);
        assert!((y.data()[2] - 20.0).abs() < 1e-6);
        assert!(y.data()[3].abs() < 1e-6);
    }
}
