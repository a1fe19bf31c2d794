//! Stride-1, zero-padded 2-D convolution with groups.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor4};

/// Depth-wise kernel sides the network is defined for.
pub const DEPTHWISE_KERNELS: [usize; 6] = [3, 5, 7, 9, 11, 13];

/// Borrowed view of a convolution's parameters.
///
/// `coeffs` is shaped `(out_ch, in_ch_per_group, k, k)`.
#[derive(Clone, Copy, Debug)]
pub struct ConvWeight<'a, T> {
    pub coeffs: &'a Tensor4<T>,
    pub bias: Option<&'a [T]>,
    pub groups: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub coeffs: Tensor4<T>,
    pub bias: Option<Vec<T>>,
}

impl<'a, T: Real> ConvWeight<'a, T> {
    pub fn new(coeffs: &'a Tensor4<T>, bias: Option<&'a [T]>, groups: usize) -> Self {
        ConvWeight {
            coeffs,
            bias,
            groups,
        }
    }

    pub fn out_ch(&self) -> usize {
        self.coeffs.n()
    }

    pub fn in_ch_per_group(&self) -> usize {
        self.coeffs.c()
    }

    pub fn k(&self) -> usize {
        self.coeffs.h()
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        let k = self.k();
        if self.coeffs.w() != k {
            return Err(Error::config(format!(
                "non-square kernel {}x{}",
                k,
                self.coeffs.w()
            )));
        }
        if k.is_multiple_of(2) {
            return Err(Error::config(format!("kernel side {k} must be odd")));
        }
        if self.groups == 0 || !self.out_ch().is_multiple_of(self.groups) {
            return Err(Error::config(format!(
                "{} output channels not divisible into {} groups",
                self.out_ch(),
                self.groups
            )));
        }
        if x.c() != self.groups * self.in_ch_per_group() {
            return Err(Error::shape("conv2d", &x.dims(), &self.coeffs.dims()));
        }
        if let Some(b) = self.bias {
            if b.len() != self.out_ch() {
                return Err(Error::shape("conv2d bias", &[self.out_ch()], &[b.len()]));
            }
        }
        Ok(())
    }
}

/// Range of output coordinates whose tap at offset `d` lands inside `0..len`.
#[inline]
fn valid(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

pub fn conv2d<T: Real>(x: &Tensor4<T>, w: &ConvWeight<'_, T>) -> Result<Tensor4<T>> {
    w.check(x)?;
    let (n, h, wd) = (x.n(), x.h(), x.w());
    let out_ch = w.out_ch();
    let cin_g = w.in_ch_per_group();
    let cout_g = out_ch / w.groups;
    let k = w.k();
    let pad = (k / 2) as isize;
    let plane = h * wd;
    let mut out = Tensor4::zeros(Shape::new(n, out_ch, h, wd));
    let coeffs = w.coeffs.data();

    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(slot, dst)| {
            let (i, o) = (slot / out_ch, slot % out_ch);
            let b = w.bias.map_or(T::zero(), |b| b[o]);
            dst.iter_mut().for_each(|v| *v = b);
            let g = o / cout_g;
            for icl in 0..cin_g {
                let src = x.plane(i, g * cin_g + icl);
                let kbase = (o * cin_g + icl) * k * k;
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid(h, dy);
                    for kx in 0..k {
                        let wv = coeffs[kbase + ky * k + kx];
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid(wd, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let srow = &src[sy * wd..(sy + 1) * wd];
                            let drow = &mut dst[y * wd + x0..y * wd + x1];
                            let sx0 = (x0 as isize + dx) as usize;
                            for (d, &s) in drow.iter_mut().zip(&srow[sx0..sx0 + (x1 - x0)]) {
                                *d = *d + wv * s;
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Convolution with one filter per channel.
pub fn depthwise_conv2d<T: Real>(x: &Tensor4<T>, w: &ConvWeight<'_, T>) -> Result<Tensor4<T>> {
    check_depthwise(x, w)?;
    conv2d(x, w)
}

fn check_depthwise<T: Real>(x: &Tensor4<T>, w: &ConvWeight<'_, T>) -> Result<()> {
    if !DEPTHWISE_KERNELS.contains(&w.k()) {
        return Err(Error::config(format!(
            "depth-wise kernel {} not in {:?}",
            w.k(),
            DEPTHWISE_KERNELS
        )));
    }
    if w.groups != x.c() || w.in_ch_per_group() != 1 || w.out_ch() != x.c() {
        return Err(Error::shape(
            "depthwise_conv2d",
            &x.dims(),
            &w.coeffs.dims(),
        ));
    }
    Ok(())
}

/// Vector-Jacobian product of [`conv2d`] with respect to input, coefficients and bias.
pub fn conv2d_vjp<T: Real>(
    x: &Tensor4<T>,
    w: &ConvWeight<'_, T>,
    gy: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    w.check(x)?;
    let (n, h, wd) = (x.n(), x.h(), x.w());
    let out_ch = w.out_ch();
    if gy.dims() != [n, out_ch, h, wd] {
        return Err(Error::shape("conv2d_vjp", &[n, out_ch, h, wd], &gy.dims()));
    }
    let cin = x.c();
    let cin_g = w.in_ch_per_group();
    let cout_g = out_ch / w.groups;
    let k = w.k();
    let pad = (k / 2) as isize;
    let plane = h * wd;
    let coeffs = w.coeffs.data();

    let mut gx = Tensor4::zeros(x.shape());
    gx.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(slot, dst)| {
            let (i, ic) = (slot / cin, slot % cin);
            let (g, icl) = (ic / cin_g, ic % cin_g);
            for o in g * cout_g..(g + 1) * cout_g {
                let src = gy.plane(i, o);
                let kbase = (o * cin_g + icl) * k * k;
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid(h, dy);
                    for kx in 0..k {
                        let wv = coeffs[kbase + ky * k + kx];
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid(wd, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let grow = &src[y * wd + x0..y * wd + x1];
                            let sx0 = (x0 as isize + dx) as usize;
                            let drow = &mut dst[sy * wd + sx0..sy * wd + sx0 + (x1 - x0)];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d = *d + wv * gv;
                            }
                        }
                    }
                }
            }
        });

    let mut gw = Tensor4::zeros(w.coeffs.shape());
    gw.data_mut()
        .par_chunks_mut(cin_g * k * k)
        .enumerate()
        .for_each(|(o, dst)| {
            let g = o / cout_g;
            for icl in 0..cin_g {
                let ic = g * cin_g + icl;
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid(wd, dx);
                        let mut acc = T::zero();
                        if x0 < x1 {
                            for i in 0..n {
                                let gp = gy.plane(i, o);
                                let xp = x.plane(i, ic);
                                for y in y0..y1 {
                                    let sy = (y as isize + dy) as usize;
                                    let sx0 = (x0 as isize + dx) as usize;
                                    let grow = &gp[y * wd + x0..y * wd + x1];
                                    let xrow = &xp[sy * wd + sx0..sy * wd + sx0 + (x1 - x0)];
                                    for (&a, &b) in grow.iter().zip(xrow) {
                                        acc = acc + a * b;
                                    }
                                }
                            }
                        }
                        dst[(icl * k + ky) * k + kx] = acc;
                    }
                }
            }
        });

    let gb = w.bias.map(|_| {
        (0..out_ch)
            .map(|o| {
                (0..n).fold(T::zero(), |acc, i| {
                    gy.plane(i, o).iter().fold(acc, |a, &v| a + v)
                })
            })
            .collect()
    });

    Ok(ConvGrads {
        input: gx,
        coeffs: gw,
        bias: gb,
    })
}

pub fn depthwise_conv2d_vjp<T: Real>(
    x: &Tensor4<T>,
    w: &ConvWeight<'_, T>,
    gy: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    check_depthwise(x, w)?;
    conv2d_vjp(x, w, gy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    /// Straight quadruple loop, reading out-of-image taps as zero.
    fn naive_conv(
        x: &Tensor4<f64>,
        coeffs: &Tensor4<f64>,
        bias: Option<&[f64]>,
        groups: usize,
    ) -> Tensor4<f64> {
        let (oc, cg, k) = (coeffs.n(), coeffs.c(), coeffs.h());
        let p = (k / 2) as isize;
        Tensor4::from_fn(Shape::new(x.n(), oc, x.h(), x.w()), |i, o, y, xx| {
            let g = o / (oc / groups);
            let mut s = bias.map_or(0.0, |b| b[o]);
            for icl in 0..cg {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = y as isize + ky as isize - p;
                        let sx = xx as isize + kx as isize - p;
                        if sy < 0 || sx < 0 || sy >= x.h() as isize || sx >= x.w() as isize {
                            continue;
                        }
                        s += coeffs.at(o, icl, ky, kx)
                            * x.at(i, g * cg + icl, sy as usize, sx as usize);
                    }
                }
            }
            s
        })
    }

    #[test]
    fn identity_pointwise() {
        let x = random(Shape::new(2, 3, 4, 5), 1);
        let eye = Tensor4::from_fn(
            Shape::new(3, 3, 1, 1),
            |o, i, _, _| if o == i { 1.0 } else { 0.0 },
        );
        let y = conv2d(&x, &ConvWeight::new(&eye, None, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_zero_padding() {
        let v = 2.5;
        let x = Tensor4::full(Shape::new(1, 1, 5, 5), v);
        let ones = Tensor4::full(Shape::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &ConvWeight::new(&ones, None, 1)).unwrap();
        assert_eq!(y.at(0, 0, 2, 2), 9.0 * v);
        assert_eq!(y.at(0, 0, 0, 0), 4.0 * v);
        assert_eq!(y.at(0, 0, 4, 2), 6.0 * v);
    }

    #[test]
    fn matches_naive_oracle() {
        let x = random(Shape::new(1, 2, 5, 5), 2);
        let coeffs = random(Shape::new(3, 2, 3, 3), 3);
        let bias = [0.1, -0.2, 0.3];
        let y = conv2d(&x, &ConvWeight::new(&coeffs, Some(&bias), 1)).unwrap();
        assert!(y.max_abs_diff(&naive_conv(&x, &coeffs, Some(&bias), 1)) < 1e-12);

        let x = random(Shape::new(2, 4, 6, 7), 4);
        let coeffs = random(Shape::new(6, 2, 5, 5), 5);
        let y = conv2d(&x, &ConvWeight::new(&coeffs, None, 2)).unwrap();
        assert!(y.max_abs_diff(&naive_conv(&x, &coeffs, None, 2)) < 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        let x = random(Shape::new(1, 2, 4, 4), 0);
        let even = Tensor4::zeros(Shape::new(2, 2, 2, 2));
        assert!(matches!(
            conv2d(&x, &ConvWeight::new(&even, None, 1)),
            Err(Error::Config(_))
        ));
        let wrong = Tensor4::zeros(Shape::new(2, 3, 3, 3));
        assert!(matches!(
            conv2d(&x, &ConvWeight::new(&wrong, None, 1)),
            Err(Error::Shape { .. })
        ));
        let dw = Tensor4::zeros(Shape::new(2, 1, 15, 15));
        assert!(matches!(
            depthwise_conv2d(&x, &ConvWeight::new(&dw, None, 2)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn depthwise_delta_is_identity() {
        let x = random(Shape::new(1, 4, 6, 6), 6);
        let delta = Tensor4::from_fn(Shape::new(4, 1, 3, 3), |_, _, y, x| {
            if (y, x) == (1, 1) {
                1.0
            } else {
                0.0
            }
        });
        let y = depthwise_conv2d(&x, &ConvWeight::new(&delta, None, 4)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn depthwise_channel_independence() {
        let x = random(Shape::new(1, 4, 8, 8), 7);
        let coeffs = random(Shape::new(4, 1, 5, 5), 8);
        let w = ConvWeight::new(&coeffs, None, 4);
        let y = depthwise_conv2d(&x, &w).unwrap();
        let mut x2 = x.clone();
        x2.plane_mut(0, 0).iter_mut().for_each(|v| *v += 3.0);
        let y2 = depthwise_conv2d(&x2, &w).unwrap();
        for c in 1..4 {
            assert_eq!(y.plane(0, c), y2.plane(0, c));
        }
        assert_ne!(y.plane(0, 0), y2.plane(0, 0));
    }

    #[test]
    fn depthwise_k7_matches_grouped_oracle() {
        let x = random(Shape::new(1, 4, 16, 16), 9);
        let coeffs = random(Shape::new(4, 1, 7, 7), 10);
        let bias = [0.5, 0.0, -0.5, 1.0];
        let y = depthwise_conv2d(&x, &ConvWeight::new(&coeffs, Some(&bias), 4)).unwrap();
        assert!(y.max_abs_diff(&naive_conv(&x, &coeffs, Some(&bias), 4)) < 1e-12);
    }

    #[test]
    fn linear_in_input() {
        let x = random(Shape::new(1, 2, 5, 6), 11);
        let z = random(Shape::new(1, 2, 5, 6), 12);
        let coeffs = random(Shape::new(3, 2, 3, 3), 13);
        let bias = [0.3, 0.7, -1.1];
        let (a, b) = (0.6, -1.7);
        let with_bias = ConvWeight::new(&coeffs, Some(&bias), 1);
        let no_bias = ConvWeight::new(&coeffs, None, 1);
        let lhs = conv2d(&x.scale(a).add(&z.scale(b)).unwrap(), &with_bias).unwrap();
        let cx = conv2d(&x, &no_bias).unwrap();
        let cz = conv2d(&z, &no_bias).unwrap();
        let rhs = Tensor4::from_fn(lhs.shape(), |i, o, y, xx| {
            a * cx.at(i, o, y, xx) + b * cz.at(i, o, y, xx) + bias[o]
        });
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn output_is_thread_count_independent() {
        let x = random(Shape::new(2, 4, 9, 9), 14).cast::<f32>();
        let coeffs = random(Shape::new(4, 4, 3, 3), 15).cast::<f32>();
        let w = ConvWeight::new(&coeffs, None, 1);
        let multi = conv2d(&x, &w).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let single = pool.install(|| conv2d(&x, &w).unwrap());
        assert_eq!(multi, single);
    }
}
