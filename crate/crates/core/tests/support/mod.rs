//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use shufflemixer::Tensor4;

/// Direct O(N^2) 2-D DFT of one real plane, returned as `(re, im)` row-major.
pub fn naive_dft2d(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    use std::f64::consts::TAU;
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -TAU * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    sr += plane[y * w + x] * phase.cos();
                    si += plane[y * w + x] * phase.sin();
                }
            }
            re[u * w + v] = sr;
            im[u * w + v] = si;
        }
    }
    (re, im)
}

/// MSE over a single plane, then `10 log10(255^2 / mse)`.
pub fn psnr_oracle(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    let mut sum = 0.0;
    for y in 0..a.h() {
        for x in 0..a.w() {
            let d = a.at(0, 0, y, x) - b.at(0, 0, y, x);
            sum += d * d;
        }
    }
    let mse = sum / (a.h() * a.w()) as f64;
    10.0 * (255.0 * 255.0 / mse).log10()
}

/// Window-by-window SSIM with a directly evaluated 2-D Gaussian.
pub fn ssim_oracle(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    let (k, sigma) = (11usize, 1.5f64);
    let mut weights = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for (dy, row) in weights.iter_mut().enumerate() {
        for (dx, w) in row.iter_mut().enumerate() {
            let (u, v) = (dy as f64 - 5.0, dx as f64 - 5.0);
            *w = (-(u * u + v * v) / (2.0 * sigma * sigma)).exp();
            total += *w;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for y0 in 0..=a.h() - k {
        for x0 in 0..=a.w() - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for dy in 0..k {
                for dx in 0..k {
                    let w = weights[dy][dx] / total;
                    ma += w * a.at(0, 0, y0 + dy, x0 + dx);
                    mb += w * b.at(0, 0, y0 + dy, x0 + dx);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for dy in 0..k {
                for dx in 0..k {
                    let w = weights[dy][dx] / total;
                    let (p, q) = (
                        a.at(0, 0, y0 + dy, x0 + dx) - ma,
                        b.at(0, 0, y0 + dy, x0 + dx) - mb,
                    );
                    va += w * p * p;
                    vb += w * q * q;
                    cov += w * p * q;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}
