//! Separable resampling: bilinear upscaling for the global skip and
//! antialiased bicubic for the degradation pipeline.
//!
//! Both are linear maps expressed as per-axis tap tables, so the backward
//! pass is the transposed application of the same tables.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor4};

/// Bicubic kernel parameter.
pub const CUBIC_A: f64 = -0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Resize {
    Bilinear(usize),
    Bicubic(f64),
}

/// Source taps `(index, weight)` for every output position along one axis.
#[derive(Clone, Debug)]
pub struct AxisTaps {
    pub in_len: usize,
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl AxisTaps {
    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    /// Half-pixel-centre bilinear taps with the source coordinate clamped to the image.
    pub fn bilinear(in_len: usize, scale: usize) -> Self {
        let max = (in_len - 1) as f64;
        let taps = (0..in_len * scale)
            .map(|dst| {
                let src = ((dst as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, max);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                let t = src - i0 as f64;
                vec![(i0, 1.0 - t), (i1, t)]
            })
            .collect();
        AxisTaps { in_len, taps }
    }

    /// Cubic taps, widened by `1 / scale` when downscaling, normalized, edge-clamped.
    pub fn bicubic(in_len: usize, scale: f64) -> Self {
        let out_len = bicubic_len(in_len, scale);
        let stretch = if scale < 1.0 { 1.0 / scale } else { 1.0 };
        let support = 2.0 * stretch;
        let taps = (0..out_len)
            .map(|dst| {
                let center = (dst as f64 + 0.5) / scale;
                let lo = (center - support - 0.5).floor() as isize;
                let hi = (center + support + 0.5).ceil() as isize;
                let mut row: Vec<(usize, f64)> = (lo..=hi)
                    .filter_map(|s| {
                        let wgt = cubic((s as f64 + 0.5 - center) / stretch);
                        (wgt != 0.0).then(|| (s.clamp(0, in_len as isize - 1) as usize, wgt))
                    })
                    .collect();
                let total: f64 = row.iter().map(|&(_, w)| w).sum();
                row.iter_mut().for_each(|(_, w)| *w /= total);
                row
            })
            .collect();
        AxisTaps { in_len, taps }
    }
}

pub fn bicubic_len(in_len: usize, scale: f64) -> usize {
    ((in_len as f64 * scale).round() as usize).max(1)
}

/// Keys cubic convolution kernel with `a = CUBIC_A`.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x < 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

impl Resize {
    fn validate(&self) -> Result<()> {
        match *self {
            Resize::Bilinear(s) if !(2..=4).contains(&s) => Err(Error::config(format!(
                "bilinear scale {s} not in {{2, 3, 4}}"
            ))),
            Resize::Bicubic(s) if !(s > 0.0 && s.is_finite()) => {
                Err(Error::config(format!("bicubic scale {s} must be positive")))
            }
            _ => Ok(()),
        }
    }

    fn taps(&self, h: usize, w: usize) -> (AxisTaps, AxisTaps) {
        match *self {
            Resize::Bilinear(s) => (AxisTaps::bilinear(h, s), AxisTaps::bilinear(w, s)),
            Resize::Bicubic(s) => (AxisTaps::bicubic(h, s), AxisTaps::bicubic(w, s)),
        }
    }

    pub fn apply<T: Real>(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.validate()?;
        let (ty, tx) = self.taps(x.h(), x.w());
        Ok(apply_separable(x, &ty, &tx))
    }

    /// Transposed map: cotangent of the output back to the input grid of shape `input`.
    pub fn vjp<T: Real>(&self, input: Shape, gy: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.validate()?;
        let (ty, tx) = self.taps(input.h, input.w);
        if gy.dims() != [input.n, input.c, ty.out_len(), tx.out_len()] {
            return Err(Error::shape(
                "resize_vjp",
                &[input.n, input.c, ty.out_len(), tx.out_len()],
                &gy.dims(),
            ));
        }
        Ok(apply_transposed(gy, &ty, &tx))
    }
}

fn apply_separable<T: Real>(x: &Tensor4<T>, ty: &AxisTaps, tx: &AxisTaps) -> Tensor4<T> {
    let (h, w) = (x.h(), x.w());
    let (oh, ow) = (ty.out_len(), tx.out_len());
    let ytaps: Vec<Vec<(usize, T)>> = cast_taps(ty);
    let xtaps: Vec<Vec<(usize, T)>> = cast_taps(tx);
    let mut out = Tensor4::zeros(Shape::new(x.n(), x.c(), oh, ow));
    let mut rows = vec![T::zero(); h * ow];
    for i in 0..x.n() {
        for j in 0..x.c() {
            let src = x.plane(i, j);
            for y in 0..h {
                let srow = &src[y * w..(y + 1) * w];
                for (ox, taps) in xtaps.iter().enumerate() {
                    rows[y * ow + ox] = taps.iter().fold(T::zero(), |a, &(s, wt)| a + wt * srow[s]);
                }
            }
            let dst = out.plane_mut(i, j);
            for (oy, taps) in ytaps.iter().enumerate() {
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                for &(s, wt) in taps {
                    for (d, &v) in drow.iter_mut().zip(&rows[s * ow..(s + 1) * ow]) {
                        *d = *d + wt * v;
                    }
                }
            }
        }
    }
    out
}

fn apply_transposed<T: Real>(gy: &Tensor4<T>, ty: &AxisTaps, tx: &AxisTaps) -> Tensor4<T> {
    let (h, w) = (ty.in_len, tx.in_len);
    let ow = tx.out_len();
    let ytaps: Vec<Vec<(usize, T)>> = cast_taps(ty);
    let xtaps: Vec<Vec<(usize, T)>> = cast_taps(tx);
    let mut out = Tensor4::zeros(Shape::new(gy.n(), gy.c(), h, w));
    let mut rows = vec![T::zero(); h * ow];
    for i in 0..gy.n() {
        for j in 0..gy.c() {
            rows.iter_mut().for_each(|v| *v = T::zero());
            let src = gy.plane(i, j);
            for (oy, taps) in ytaps.iter().enumerate() {
                let grow = &src[oy * ow..(oy + 1) * ow];
                for &(s, wt) in taps {
                    for (r, &g) in rows[s * ow..(s + 1) * ow].iter_mut().zip(grow) {
                        *r = *r + wt * g;
                    }
                }
            }
            let dst = out.plane_mut(i, j);
            for y in 0..h {
                let drow = &mut dst[y * w..(y + 1) * w];
                for (ox, taps) in xtaps.iter().enumerate() {
                    let g = rows[y * ow + ox];
                    for &(s, wt) in taps {
                        drow[s] = drow[s] + wt * g;
                    }
                }
            }
        }
    }
    out
}

fn cast_taps<T: Real>(t: &AxisTaps) -> Vec<Vec<(usize, T)>> {
    t.taps
        .iter()
        .map(|row| row.iter().map(|&(s, w)| (s, T::lit(w))).collect())
        .collect()
}

pub fn bilinear_resize<T: Real>(x: &Tensor4<T>, scale: usize) -> Result<Tensor4<T>> {
    Resize::Bilinear(scale).apply(x)
}

pub fn bicubic_resize<T: Real>(x: &Tensor4<T>, scale: f64) -> Result<Tensor4<T>> {
    Resize::Bicubic(scale).apply(x)
}
