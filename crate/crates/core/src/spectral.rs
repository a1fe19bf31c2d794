//! Two-dimensional discrete Fourier transform and the frequency-domain loss.
//!
//! Lengths that are powers of two use an iterative radix-2 transform; any
//! other length goes through Bluestein's chirp-z reformulation on a padded
//! power-of-two radix-2 transform. 2-D transforms run rows then columns.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ops::loss::sign;
use crate::tensor::{Real, Tensor4};

/// Unnormalized spectrum of every `(batch, channel)` slice.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexPlane<T> {
    pub re: Tensor4<T>,
    pub im: Tensor4<T>,
}

impl<T: Real> ComplexPlane<T> {
    pub fn new(re: Tensor4<T>, im: Tensor4<T>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape("complex_plane", &re.dims(), &im.dims()));
        }
        Ok(ComplexPlane { re, im })
    }
}

#[derive(Clone, Debug)]
enum Plan {
    Radix2 {
        twiddles: Vec<Complex64>,
    },
    Bluestein {
        chirp: Vec<Complex64>,
        kernel_fft: Vec<Complex64>,
        inner: Box<Fft>,
    },
}

/// Forward DFT plan for one length.
#[derive(Clone, Debug)]
pub struct Fft {
    len: usize,
    plan: Plan,
}

impl Fft {
    pub fn new(len: usize) -> Self {
        if len.is_power_of_two() {
            Self::radix2(len)
        } else {
            Self::bluestein(len)
        }
    }

    /// # Panics
    /// If `len` is not a power of two.
    pub fn radix2(len: usize) -> Self {
        assert!(
            len.is_power_of_two(),
            "radix-2 length {len} is not a power of two"
        );
        let twiddles = (0..len / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
            .collect();
        Fft {
            len,
            plan: Plan::Radix2 { twiddles },
        }
    }

    pub fn bluestein(len: usize) -> Self {
        assert!(len > 0);
        let m = (2 * len - 1).next_power_of_two();
        // k^2 mod 2n keeps the chirp phase exact for large k.
        let chirp: Vec<Complex64> = (0..len)
            .map(|k| {
                let q = (k as u128 * k as u128 % (2 * len as u128)) as f64;
                Complex64::from_polar(1.0, -PI * q / len as f64)
            })
            .collect();
        let inner = Fft::radix2(m);
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for k in 1..len {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        inner.forward(&mut kernel);
        Fft {
            len,
            plan: Plan::Bluestein {
                chirp,
                kernel_fft: kernel,
                inner: Box::new(inner),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place unnormalized forward transform, `X[u] = sum x[t] e^{-2 pi i u t / n}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len);
        match &self.plan {
            Plan::Radix2 { twiddles } => radix2_in_place(buf, twiddles),
            Plan::Bluestein {
                chirp,
                kernel_fft,
                inner,
            } => {
                let m = inner.len;
                let mut a = vec![Complex64::new(0.0, 0.0); m];
                for (k, (&x, &c)) in buf.iter().zip(chirp).enumerate() {
                    a[k] = x * c;
                }
                inner.forward(&mut a);
                for (v, &k) in a.iter_mut().zip(kernel_fft) {
                    *v *= k;
                }
                inner.inverse_unnormalized(&mut a);
                let scale = 1.0 / m as f64;
                for (k, out) in buf.iter_mut().enumerate() {
                    *out = a[k] * chirp[k] * scale;
                }
            }
        }
    }

    /// `sum X[u] e^{+2 pi i u t / n}` with no `1/n` factor.
    pub fn inverse_unnormalized(&self, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|v| *v = v.conj());
        self.forward(buf);
        buf.iter_mut().for_each(|v| *v = v.conj());
    }
}

fn radix2_in_place(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let stride = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let t = buf[start + k + half] * twiddles[k * stride];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
            }
        }
        size *= 2;
    }
}

/// Row-then-column transform of an `h x w` plane stored row-major.
fn transform_plane(
    plane: &mut [Complex64],
    h: usize,
    w: usize,
    rows: &Fft,
    cols: &Fft,
    inverse: bool,
) {
    let run = |f: &Fft, b: &mut [Complex64]| {
        if inverse {
            f.inverse_unnormalized(b)
        } else {
            f.forward(b)
        }
    };
    for y in 0..h {
        run(rows, &mut plane[y * w..(y + 1) * w]);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = plane[y * w + x];
        }
        run(cols, &mut col);
        for y in 0..h {
            plane[y * w + x] = col[y];
        }
    }
}

fn planes<T: Real>(re: &Tensor4<T>, im: Option<&Tensor4<T>>, inverse: bool) -> Vec<Vec<Complex64>> {
    let (h, w) = (re.h(), re.w());
    let rows = Fft::new(w);
    let cols = Fft::new(h);
    let mut out = Vec::with_capacity(re.n() * re.c());
    for i in 0..re.n() {
        for j in 0..re.c() {
            let mut plane: Vec<Complex64> = match im {
                Some(im) => re
                    .plane(i, j)
                    .iter()
                    .zip(im.plane(i, j))
                    .map(|(&a, &b)| Complex64::new(a.to_f64_lossy(), b.to_f64_lossy()))
                    .collect(),
                None => re
                    .plane(i, j)
                    .iter()
                    .map(|&a| Complex64::new(a.to_f64_lossy(), 0.0))
                    .collect(),
            };
            transform_plane(&mut plane, h, w, &rows, &cols, inverse);
            out.push(plane);
        }
    }
    out
}

fn to_plane<T: Real>(
    like: &Tensor4<T>,
    planes: Vec<Vec<Complex64>>,
    scale: f64,
) -> ComplexPlane<T> {
    let mut re = like.zeros_like();
    let mut im = like.zeros_like();
    let flat = planes.into_iter().flatten();
    for ((r, i), v) in re
        .data_mut()
        .iter_mut()
        .zip(im.data_mut().iter_mut())
        .zip(flat)
    {
        *r = T::lit(v.re * scale);
        *i = T::lit(v.im * scale);
    }
    ComplexPlane { re, im }
}

pub fn fft2d<T: Real>(x: &Tensor4<T>) -> ComplexPlane<T> {
    to_plane(x, planes(x, None, false), 1.0)
}

/// Inverse transform with `1 / (h w)` normalization.
pub fn ifft2d<T: Real>(spec: &ComplexPlane<T>) -> ComplexPlane<T> {
    let scale = 1.0 / spec.re.shape().plane() as f64;
    to_plane(&spec.re, planes(&spec.re, Some(&spec.im), true), scale)
}

/// Mean over bins, channels and batch of `|d re| + |d im|` between the spectra.
pub fn frequency_loss<T: Real>(sr: &Tensor4<T>, gt: &Tensor4<T>) -> Result<f64> {
    if sr.shape() != gt.shape() {
        return Err(Error::shape("frequency_loss", &sr.dims(), &gt.dims()));
    }
    let diff = sr.sub(gt)?;
    let total: f64 = planes(&diff, None, false)
        .iter()
        .flatten()
        .map(|v| v.re.abs() + v.im.abs())
        .sum();
    Ok(total / sr.len() as f64)
}

/// Gradient of `cot * frequency_loss` with respect to `sr`.
///
/// For a real input the transpose of the forward DFT is the unnormalized
/// inverse transform, so the gradient is the real part of the inverse
/// transform of the elementwise sign spectrum.
pub fn frequency_loss_vjp<T: Real>(sr: &Tensor4<T>, gt: &Tensor4<T>, cot: T) -> Result<Tensor4<T>> {
    if sr.shape() != gt.shape() {
        return Err(Error::shape("frequency_loss_vjp", &sr.dims(), &gt.dims()));
    }
    let diff = sr.sub(gt)?;
    let spec = to_plane(&diff, planes(&diff, None, false), 1.0);
    let signs = ComplexPlane {
        re: spec.re.map(sign),
        im: spec.im.map(sign),
    };
    let back = planes(&signs.re, Some(&signs.im), true);
    let k = cot.to_f64_lossy() / sr.len() as f64;
    Ok(to_plane(sr, back, k).re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|u| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        v * Complex64::from_polar(1.0, -2.0 * PI * ((u * t) % n) as f64 / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    fn random_signal(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn one_dimensional_lengths_match_naive() {
        for n in [1, 2, 3, 5, 7, 8, 12, 13, 16, 31, 64, 100] {
            let x = random_signal(n, n as u64);
            let mut y = x.clone();
            Fft::new(n).forward(&mut y);
            let want = naive_dft(&x);
            let scale = want.iter().map(|v| v.norm()).fold(1.0, f64::max);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).norm() / scale < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn bluestein_agrees_with_radix2() {
        for n in [2, 4, 8, 32, 128] {
            let x = random_signal(n, 100 + n as u64);
            let mut a = x.clone();
            let mut b = x.clone();
            Fft::radix2(n).forward(&mut a);
            Fft::bluestein(n).forward(&mut b);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn delta_and_constant_spectra() {
        let delta = Tensor4::from_fn(Shape::new(1, 1, 6, 5), |_, _, y, x| {
            if (y, x) == (0, 0) {
                1.0f64
            } else {
                0.0
            }
        });
        let s = fft2d(&delta);
        assert!(s.re.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(s.im.data().iter().all(|&v| v.abs() < 1e-12));

        let v = 0.7f64;
        let c = Tensor4::full(Shape::new(1, 1, 6, 5), v);
        let s = fft2d(&c);
        assert!((s.re.at(0, 0, 0, 0) - v * 30.0).abs() < 1e-9);
        for k in 1..30 {
            assert!(s.re.data()[k].abs() < 1e-9 && s.im.data()[k].abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_special_cases() {
        let shape = Shape::new(1, 2, 4, 3);
        let zero = ComplexPlane::new(Tensor4::<f64>::zeros(shape), Tensor4::zeros(shape)).unwrap();
        let back = ifft2d(&zero);
        assert!(back
            .re
            .data()
            .iter()
            .chain(back.im.data())
            .all(|&v| v == 0.0));

        let mut re = Tensor4::<f64>::zeros(shape);
        re.set(0, 0, 0, 0, 12.0);
        re.set(0, 1, 0, 0, 12.0);
        let back = ifft2d(&ComplexPlane::new(re, Tensor4::zeros(shape)).unwrap());
        assert!(back.re.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(back.im.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn frequency_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Tensor4::from_fn(Shape::new(2, 3, 5, 6), |_, _, _, _| {
            rng.gen_range(-1.0..1.0f64)
        });
        assert_eq!(frequency_loss(&a, &a).unwrap(), 0.0);

        let amp = 0.8;
        let delta = Tensor4::from_fn(Shape::new(1, 1, 7, 4), |_, _, y, x| {
            if (y, x) == (0, 0) {
                amp
            } else {
                0.0
            }
        });
        let l = frequency_loss(&delta, &delta.zeros_like()).unwrap();
        assert!((l - amp).abs() < 1e-12);

        let b = Tensor4::from_fn(a.shape(), |_, _, _, _| rng.gen_range(-1.0..1.0f64));
        let base = frequency_loss(&a, &b).unwrap();
        let alpha = -2.5;
        let scaled = frequency_loss(&a.scale(alpha), &b.scale(alpha)).unwrap();
        assert!((scaled - alpha.abs() * base).abs() < 1e-10 * scaled);

        assert!(frequency_loss(&a, &delta).is_err());
    }
}
