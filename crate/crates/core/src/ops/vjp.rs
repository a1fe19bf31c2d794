//! Uniform backward entry point over every differentiable operation.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ops::conv::{conv2d_vjp, depthwise_conv2d_vjp, ConvWeight};
use crate::ops::layout::{
    channel_concat, channel_embed, channel_shuffle, channel_slice, pixel_shuffle, pixel_unshuffle,
};
use crate::ops::loss::l1_loss_vjp;
use crate::ops::norm::{layer_norm_vjp, silu_vjp, NormWeight};
use crate::ops::resize::Resize;
use crate::spectral::frequency_loss_vjp;
use crate::tensor::{Real, Shape, Tensor4};

/// Operation identifier together with its static attributes.
///
/// Input conventions for [`vjp`]:
/// * convolutions: `[x, coeffs, bias]` (bias optional, as a `(1, out, 1, 1)` tensor)
/// * `LayerNorm`: `[x, gamma]` with gamma as a `(1, c, 1, 1)` tensor
/// * losses: `[sr, gt]` with a `(1, 1, 1, 1)` scalar cotangent
/// * everything else: the forward operands in order.
///
/// One cotangent is passed per output; only `ChannelSplit` has two.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpId {
    Add,
    Sub,
    Mul,
    Conv2d { groups: usize },
    DepthwiseConv2d,
    LayerNorm { eps: f64 },
    Silu,
    ChannelSplit,
    ChannelSlice { start: usize, len: usize },
    ChannelConcat,
    ChannelShuffle { groups: usize },
    PixelShuffle { r: usize },
    PixelUnshuffle { r: usize },
    Resize(Resize),
    L1Loss,
    FrequencyLoss,
}

impl FromStr for OpId {
    type Err = Error;

    /// Parses `name` or `name:arg`, e.g. `silu`, `channel_shuffle:2`, `bilinear:3`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let int = |a: Option<&str>| -> Result<usize> {
            a.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::config(format!("op `{s}` needs an integer argument")))
        };
        let real = |a: Option<&str>| -> Result<f64> {
            a.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::config(format!("op `{s}` needs a numeric argument")))
        };
        Ok(match name {
            "add" => OpId::Add,
            "sub" => OpId::Sub,
            "mul" => OpId::Mul,
            "conv2d" => OpId::Conv2d {
                groups: arg.map_or(Ok(1), |a| int(Some(a)))?,
            },
            "depthwise_conv2d" => OpId::DepthwiseConv2d,
            "layer_norm" => OpId::LayerNorm {
                eps: arg.map_or(Ok(crate::ops::norm::LAYER_NORM_EPS), |a| real(Some(a)))?,
            },
            "silu" => OpId::Silu,
            "channel_split" => OpId::ChannelSplit,
            "channel_concat" => OpId::ChannelConcat,
            "channel_shuffle" => OpId::ChannelShuffle { groups: int(arg)? },
            "pixel_shuffle" => OpId::PixelShuffle { r: int(arg)? },
            "pixel_unshuffle" => OpId::PixelUnshuffle { r: int(arg)? },
            "bilinear" => OpId::Resize(Resize::Bilinear(int(arg)?)),
            "bicubic" => OpId::Resize(Resize::Bicubic(real(arg)?)),
            "l1_loss" => OpId::L1Loss,
            "frequency_loss" => OpId::FrequencyLoss,
            _ => return Err(Error::config(format!("unknown op id `{s}`"))),
        })
    }
}

fn arity(op: OpId, inputs: &[&Tensor4<impl Real>], want: &[usize]) -> Result<()> {
    if want.contains(&inputs.len()) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{op:?} takes {want:?} inputs, got {}",
            inputs.len()
        )))
    }
}

fn one<T: Real>(op: OpId, cots: &[&Tensor4<T>], n: usize) -> Result<()> {
    if cots.len() == n {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{op:?} expects {n} cotangents, got {}",
            cots.len()
        )))
    }
}

fn scalar<T: Real>(t: &Tensor4<T>) -> Result<T> {
    if t.len() != 1 {
        return Err(Error::shape("loss cotangent", &[1, 1, 1, 1], &t.dims()));
    }
    Ok(t.data()[0])
}

/// Vector-Jacobian product: cotangents for every input of `op`.
pub fn vjp<T: Real>(
    op: OpId,
    inputs: &[&Tensor4<T>],
    cots: &[&Tensor4<T>],
) -> Result<Vec<Tensor4<T>>> {
    let expected_cots = if op == OpId::ChannelSplit { 2 } else { 1 };
    one(op, cots, expected_cots)?;
    let g = cots[0];
    match op {
        OpId::Add | OpId::Sub | OpId::Mul => {
            arity(op, inputs, &[2])?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() || g.shape() != a.shape() {
                return Err(Error::shape("elementwise_vjp", &a.dims(), &g.dims()));
            }
            Ok(match op {
                OpId::Add => vec![g.clone(), g.clone()],
                OpId::Sub => vec![g.clone(), g.scale(-T::one())],
                _ => vec![g.mul(b)?, g.mul(a)?],
            })
        }
        OpId::Conv2d { .. } | OpId::DepthwiseConv2d => {
            arity(op, inputs, &[2, 3])?;
            let bias = inputs.get(2).map(|b| b.data());
            let groups = match op {
                OpId::Conv2d { groups } => groups,
                _ => inputs[0].c(),
            };
            let w = ConvWeight::new(inputs[1], bias, groups);
            let grads = if op == OpId::DepthwiseConv2d {
                depthwise_conv2d_vjp(inputs[0], &w, g)?
            } else {
                conv2d_vjp(inputs[0], &w, g)?
            };
            let mut out = vec![grads.input, grads.coeffs];
            if let Some(b) = grads.bias {
                out.push(Tensor4::vector(b));
            }
            Ok(out)
        }
        OpId::LayerNorm { eps } => {
            arity(op, inputs, &[2])?;
            let w = NormWeight {
                gamma: inputs[1].data(),
                eps: T::lit(eps),
            };
            let (gx, gg) = layer_norm_vjp(inputs[0], &w, g)?;
            Ok(vec![gx, Tensor4::vector(gg)])
        }
        OpId::Silu => {
            arity(op, inputs, &[1])?;
            Ok(vec![silu_vjp(inputs[0], g)?])
        }
        OpId::ChannelSplit => {
            arity(op, inputs, &[1])?;
            Ok(vec![channel_concat(cots[0], cots[1])?])
        }
        OpId::ChannelSlice { start, .. } => {
            arity(op, inputs, &[1])?;
            Ok(vec![channel_embed(g, start, inputs[0].c())?])
        }
        OpId::ChannelConcat => {
            arity(op, inputs, &[2])?;
            let ca = inputs[0].c();
            Ok(vec![
                channel_slice(g, 0, ca)?,
                channel_slice(g, ca, inputs[1].c())?,
            ])
        }
        OpId::ChannelShuffle { groups } => {
            arity(op, inputs, &[1])?;
            if groups == 0 || !g.c().is_multiple_of(groups) {
                return Err(Error::config(format!("bad shuffle groups {groups}")));
            }
            Ok(vec![channel_shuffle(g, g.c() / groups)?])
        }
        OpId::PixelShuffle { r } => {
            arity(op, inputs, &[1])?;
            Ok(vec![pixel_unshuffle(g, r)?])
        }
        OpId::PixelUnshuffle { r } => {
            arity(op, inputs, &[1])?;
            Ok(vec![pixel_shuffle(g, r)?])
        }
        OpId::Resize(kind) => {
            arity(op, inputs, &[1])?;
            Ok(vec![kind.vjp(inputs[0].shape(), g)?])
        }
        OpId::L1Loss | OpId::FrequencyLoss => {
            arity(op, inputs, &[2])?;
            let c = scalar(g)?;
            let gsr = if op == OpId::L1Loss {
                l1_loss_vjp(inputs[0], inputs[1], c)?
            } else {
                frequency_loss_vjp(inputs[0], inputs[1], c)?
            };
            let ggt = gsr.scale(-T::one());
            Ok(vec![gsr, ggt])
        }
    }
}

/// Shape of a scalar loss cotangent.
pub const SCALAR: Shape = Shape::new(1, 1, 1, 1);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ids() {
        assert_eq!("silu".parse::<OpId>().unwrap(), OpId::Silu);
        assert_eq!(
            "channel_shuffle:2".parse::<OpId>().unwrap(),
            OpId::ChannelShuffle { groups: 2 }
        );
        assert_eq!(
            "conv2d".parse::<OpId>().unwrap(),
            OpId::Conv2d { groups: 1 }
        );
        assert_eq!(
            "bicubic:0.5".parse::<OpId>().unwrap(),
            OpId::Resize(Resize::Bicubic(0.5))
        );
        assert!(matches!("softmax".parse::<OpId>(), Err(Error::Config(_))));
        assert!(matches!(
            "pixel_shuffle".parse::<OpId>(),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn add_passes_cotangent_through() {
        let a = Tensor4::from_fn(Shape::new(1, 2, 2, 2), |_, j, y, x| (j + y + x) as f64);
        let g = a.scale(0.5);
        let out = vjp(OpId::Add, &[&a, &a], &[&g]).unwrap();
        assert_eq!(out, vec![g.clone(), g]);
    }

    #[test]
    fn shuffle_cotangent_is_inverse_shuffle() {
        let x = Tensor4::from_fn(Shape::new(1, 6, 2, 2), |_, j, y, x| {
            (10 * j + 2 * y + x) as f64
        });
        let g = Tensor4::from_fn(x.shape(), |_, j, y, x| (j * j + y + 3 * x) as f64);
        let out = vjp(OpId::ChannelShuffle { groups: 2 }, &[&x], &[&g]).unwrap();
        assert_eq!(out[0], channel_shuffle(&g, 3).unwrap());
    }
}
