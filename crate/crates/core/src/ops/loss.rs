use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// Mean absolute difference.
pub fn l1_loss<T: Real>(sr: &Tensor4<T>, gt: &Tensor4<T>) -> Result<f64> {
    if sr.shape() != gt.shape() {
        return Err(Error::shape("l1_loss", &sr.dims(), &gt.dims()));
    }
    let sum: f64 = sr
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| (a - b).abs().to_f64_lossy())
        .sum();
    Ok(sum / sr.len() as f64)
}

/// Gradient of `cot * l1_loss` with respect to `sr`; the subgradient at zero is 0.
pub fn l1_loss_vjp<T: Real>(sr: &Tensor4<T>, gt: &Tensor4<T>, cot: T) -> Result<Tensor4<T>> {
    if sr.shape() != gt.shape() {
        return Err(Error::shape("l1_loss_vjp", &sr.dims(), &gt.dims()));
    }
    let k = cot / T::lit(sr.len() as f64);
    let data = sr
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| sign(a - b) * k)
        .collect();
    Tensor4::from_vec(sr.shape(), data)
}

#[inline]
pub(crate) fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn mean_absolute_value() {
        let sr = Tensor4::full(Shape::new(1, 3, 4, 4), 0.5f64);
        let gt = sr.zeros_like();
        assert_eq!(l1_loss(&sr, &gt).unwrap(), 0.5);
        assert_eq!(l1_loss(&sr, &sr).unwrap(), 0.0);
        assert!(l1_loss_vjp(&sr, &sr, 1.0)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}
