//! PSNR and SSIM on the luma channel with border shaving.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor4};

pub const DATA_RANGE: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalProtocol {
    /// Pixels removed from every side before scoring.
    pub shave: usize,
    pub y_only: bool,
    pub data_range: f64,
}

impl EvalProtocol {
    pub fn for_scale(scale: usize) -> Self {
        EvalProtocol {
            shave: scale,
            y_only: true,
            data_range: DATA_RANGE,
        }
    }
}

/// BT.601 limited-range luma on the 0-255 scale from RGB in `[0, 1]`.
pub fn rgb_to_y<T: Real>(img: &Tensor4<T>) -> Result<Tensor4<f64>> {
    if img.c() != 3 {
        return Err(Error::shape(
            "rgb_to_y",
            &[img.n(), 3, img.h(), img.w()],
            &img.dims(),
        ));
    }
    let mut out = Tensor4::zeros(Shape::new(img.n(), 1, img.h(), img.w()));
    for i in 0..img.n() {
        let (r, g, b) = (img.plane(i, 0), img.plane(i, 1), img.plane(i, 2));
        for (k, y) in out.plane_mut(i, 0).iter_mut().enumerate() {
            *y = 16.0
                + 65.481 * r[k].to_f64_lossy()
                + 128.553 * g[k].to_f64_lossy()
                + 24.966 * b[k].to_f64_lossy();
        }
    }
    Ok(out)
}

/// Maps an RGB image in `[0, 1]` onto the plane the metrics compare.
pub fn prepare<T: Real>(img: &Tensor4<T>, proto: &EvalProtocol) -> Result<Tensor4<f64>> {
    if proto.y_only {
        rgb_to_y(img)
    } else {
        Ok(img.cast::<f64>().scale(proto.data_range))
    }
}

/// Rounds `[0, 1]` values to the nearest 8-bit level (after clamping), keeping the `[0, 1]` scale.
pub fn quantize_8bit<T: Real>(img: &Tensor4<T>) -> Tensor4<T> {
    img.map(|v| {
        let q = (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round();
        T::lit(q / 255.0)
    })
}

fn shave(t: &Tensor4<f64>, border: usize) -> Result<Tensor4<f64>> {
    if t.h() <= 2 * border || t.w() <= 2 * border {
        return Err(Error::config(format!(
            "cannot shave {border} pixels from a {}x{} image",
            t.h(),
            t.w()
        )));
    }
    if border == 0 {
        return Ok(t.clone());
    }
    let (h, w) = (t.h() - 2 * border, t.w() - 2 * border);
    Ok(Tensor4::from_fn(
        Shape::new(t.n(), t.c(), h, w),
        |i, j, y, x| t.at(i, j, y + border, x + border),
    ))
}

fn shaved_pair(
    a: &Tensor4<f64>,
    b: &Tensor4<f64>,
    proto: &EvalProtocol,
    op: &'static str,
) -> Result<(Tensor4<f64>, Tensor4<f64>)> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, &a.dims(), &b.dims()));
    }
    Ok((shave(a, proto.shave)?, shave(b, proto.shave)?))
}

/// Peak signal-to-noise ratio in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor4<f64>, b: &Tensor4<f64>, proto: &EvalProtocol) -> Result<f64> {
    let (a, b) = shaved_pair(a, b, proto, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (proto.data_range * proto.data_range / mse).log10())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(t, &g)| g * plane[y * w + x + t])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(t, &g)| g * rows[(y + t) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over every fully-contained 11x11 Gaussian window.
pub fn ssim(a: &Tensor4<f64>, b: &Tensor4<f64>, proto: &EvalProtocol) -> Result<f64> {
    let (a, b) = shaved_pair(a, b, proto, "ssim")?;
    let (h, w) = (a.h(), a.w());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let c1 = (0.01 * proto.data_range).powi(2);
    let c2 = (0.03 * proto.data_range).powi(2);
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (mut total, mut count) = (0.0, 0usize);
    for i in 0..a.n() {
        for j in 0..a.c() {
            let (pa, pb) = (a.plane(i, j), b.plane(i, j));
            let sq = |p: &[f64], q: &[f64]| -> Vec<f64> {
                p.iter().zip(q).map(|(x, y)| x * y).collect()
            };
            let mu_a = filter_valid(pa, h, w, &taps);
            let mu_b = filter_valid(pb, h, w, &taps);
            let e_aa = filter_valid(&sq(pa, pa), h, w, &taps);
            let e_bb = filter_valid(&sq(pb, pb), h, w, &taps);
            let e_ab = filter_valid(&sq(pa, pb), h, w, &taps);
            for q in 0..mu_a.len() {
                let (ma, mb) = (mu_a[q], mu_b[q]);
                let va = e_aa[q] - ma * ma;
                let vb = e_bb[q] - mb * mb;
                let cov = e_ab[q] - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
            count += mu_a.len();
        }
    }
    Ok(total / count as f64)
}

/// `(psnr, ssim)` for an RGB pair in `[0, 1]`.
pub fn evaluate_pair<T: Real>(
    sr: &Tensor4<T>,
    hr: &Tensor4<T>,
    proto: &EvalProtocol,
) -> Result<(f64, f64)> {
    let a = prepare(sr, proto)?;
    let b = prepare(hr, proto)?;
    Ok((psnr(&a, &b, proto)?, ssim(&a, &b, proto)?))
}
