//! Pure rearrangements: channel split/concat/shuffle and pixel (un)shuffle.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor4};

/// Channels `start..start + len` of `x`.
pub fn channel_slice<T: Real>(x: &Tensor4<T>, start: usize, len: usize) -> Result<Tensor4<T>> {
    if len == 0 || start + len > x.c() {
        return Err(Error::config(format!(
            "channel slice {start}..{} outside 0..{}",
            start + len,
            x.c()
        )));
    }
    let mut out = Tensor4::zeros(Shape::new(x.n(), len, x.h(), x.w()));
    for i in 0..x.n() {
        for j in 0..len {
            out.plane_mut(i, j).copy_from_slice(x.plane(i, start + j));
        }
    }
    Ok(out)
}

/// Embeds `g` at channel offset `start` of an otherwise zero tensor with `total` channels.
pub fn channel_embed<T: Real>(g: &Tensor4<T>, start: usize, total: usize) -> Result<Tensor4<T>> {
    if start + g.c() > total {
        return Err(Error::config(format!(
            "cannot embed {} channels at {start} into {total}",
            g.c()
        )));
    }
    let mut out = Tensor4::zeros(Shape::new(g.n(), total, g.h(), g.w()));
    for i in 0..g.n() {
        for j in 0..g.c() {
            out.plane_mut(i, start + j).copy_from_slice(g.plane(i, j));
        }
    }
    Ok(out)
}

pub fn channel_split<T: Real>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Tensor4<T>)> {
    if !x.c().is_multiple_of(2) {
        return Err(Error::config(format!(
            "cannot split odd channel count {}",
            x.c()
        )));
    }
    let half = x.c() / 2;
    Ok((channel_slice(x, 0, half)?, channel_slice(x, half, half)?))
}

pub fn channel_concat<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if (a.n(), a.h(), a.w()) != (b.n(), b.h(), b.w()) {
        return Err(Error::shape("channel_concat", &a.dims(), &b.dims()));
    }
    let mut out = Tensor4::zeros(Shape::new(a.n(), a.c() + b.c(), a.h(), a.w()));
    for i in 0..a.n() {
        for j in 0..a.c() {
            out.plane_mut(i, j).copy_from_slice(a.plane(i, j));
        }
        for j in 0..b.c() {
            out.plane_mut(i, a.c() + j).copy_from_slice(b.plane(i, j));
        }
    }
    Ok(out)
}

/// Views channels as a `(groups, c / groups)` grid, transposes and flattens.
pub fn channel_shuffle<T: Real>(x: &Tensor4<T>, groups: usize) -> Result<Tensor4<T>> {
    let c = x.c();
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::config(format!(
            "channel count {c} not divisible by {groups} shuffle groups"
        )));
    }
    let per = c / groups;
    let mut out = Tensor4::zeros(x.shape());
    for i in 0..x.n() {
        for j in 0..c {
            out.plane_mut(i, j)
                .copy_from_slice(x.plane(i, (j % groups) * per + j / groups));
        }
    }
    Ok(out)
}

pub fn pixel_shuffle<T: Real>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    if r == 0 || !x.c().is_multiple_of(r * r) {
        return Err(Error::config(format!(
            "channel count {} not divisible by {r}^2",
            x.c()
        )));
    }
    let oc = x.c() / (r * r);
    let shape = Shape::new(x.n(), oc, x.h() * r, x.w() * r);
    let mut out = Tensor4::zeros(shape);
    for i in 0..x.n() {
        for j in 0..oc {
            for dy in 0..r {
                for dx in 0..r {
                    let src = x.plane(i, j * r * r + dy * r + dx);
                    for y in 0..x.h() {
                        for xx in 0..x.w() {
                            out.set(i, j, y * r + dy, xx * r + dx, src[y * x.w() + xx]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn pixel_unshuffle<T: Real>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    if r == 0 || !x.h().is_multiple_of(r) || !x.w().is_multiple_of(r) {
        return Err(Error::config(format!(
            "spatial size {}x{} not divisible by {r}",
            x.h(),
            x.w()
        )));
    }
    let (h, w) = (x.h() / r, x.w() / r);
    let mut out = Tensor4::zeros(Shape::new(x.n(), x.c() * r * r, h, w));
    for i in 0..x.n() {
        for j in 0..x.c() {
            for dy in 0..r {
                for dx in 0..r {
                    let oc = j * r * r + dy * r + dx;
                    for y in 0..h {
                        for xx in 0..w {
                            out.set(i, oc, y, xx, x.at(i, j, y * r + dy, xx * r + dx));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
