//! Network definition: configuration, parameter layout and dataflow.
//!
//! ```text
//! lr ─ stem 3x3 ─ trunk ─ upsampler ─ head 3x3 ─(+)─ sr
//!  └──────────────── bilinear x s ───────────────┘
//! ```
//!
//! The full trunk stacks feature mixing blocks (two shuffle mixer layers and
//! a fusion stage). The ablation trunks (`cdc`, `css`, `convmixer_baseline`)
//! stack `2 * n_fmb` plain layers instead.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{Eager, Graph, Tape};
use crate::ops::DEPTHWISE_KERNELS;
use crate::params::{ParamKind, ParamTree};
use crate::tensor::{Real, Shape, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Repeated split/shuffle projections around the depth-wise conv.
    Cdc,
    /// Single split/shuffle projection before the depth-wise conv.
    Css,
    ConvMixerBaseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    None,
    Conv,
    SConv,
    CConv,
    SResBlock,
    SFmbConv,
}

macro_rules! named_enum {
    ($ty:ident { $($v:ident = $code:expr, $name:expr;)* }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$v),*];

            pub fn code(self) -> u16 {
                match self { $($ty::$v => $code),* }
            }

            pub fn from_code(code: u16) -> Option<Self> {
                match code { $($code => Some($ty::$v),)* _ => None }
            }

            pub fn name(self) -> &'static str {
                match self { $($ty::$v => $name),* }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$v),)*
                    _ => Err(Error::config(format!(concat!("unknown ", stringify!($ty), " `{}`"), s))),
                }
            }
        }
    };
}

named_enum!(Variant {
    Full = 0, "full";
    Cdc = 1, "cdc";
    Css = 2, "css";
    ConvMixerBaseline = 3, "convmixer_baseline";
});

named_enum!(Fusion {
    None = 0, "none";
    Conv = 1, "conv";
    SConv = 2, "s_conv";
    CConv = 3, "c_conv";
    SResBlock = 4, "s_resblock";
    SFmbConv = 5, "s_fmbconv";
});

/// Extra hidden channels of the fused MBConv expansion.
pub const DEFAULT_EXPANSION: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub channels: usize,
    pub dw_kernel: usize,
    pub n_fmb: usize,
    pub scale: usize,
    pub expansion: usize,
    pub variant: Variant,
    pub fusion: Fusion,
}

impl ModelConfig {
    /// 64 channels, 7x7 depth-wise kernels, 5 blocks.
    pub fn base(scale: usize) -> Self {
        ModelConfig {
            channels: 64,
            dw_kernel: 7,
            n_fmb: 5,
            scale,
            expansion: DEFAULT_EXPANSION,
            variant: Variant::Full,
            fusion: Fusion::SFmbConv,
        }
    }

    /// 32 channels, 3x3 depth-wise kernels, 5 blocks.
    pub fn tiny(scale: usize) -> Self {
        ModelConfig {
            channels: 32,
            dw_kernel: 3,
            ..Self::base(scale)
        }
    }

    /// Tiny x4 configuration with another trunk, as used by the ablations.
    pub fn ablation(variant: Variant, fusion: Fusion) -> Self {
        ModelConfig {
            variant,
            fusion,
            ..Self::tiny(4)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.channels;
        if d < 2 || !d.is_multiple_of(2) {
            return Err(Error::config(format!(
                "channel count {d} must be even and at least 2"
            )));
        }
        if !DEPTHWISE_KERNELS.contains(&self.dw_kernel) {
            return Err(Error::config(format!(
                "depth-wise kernel {} not in {DEPTHWISE_KERNELS:?}",
                self.dw_kernel
            )));
        }
        if self.n_fmb == 0 {
            return Err(Error::config("at least one block is required"));
        }
        if !(2..=4).contains(&self.scale) {
            return Err(Error::config(format!(
                "scale {} not in {{2, 3, 4}}",
                self.scale
            )));
        }
        let too_big = [
            d,
            self.n_fmb,
            self.expansion,
            9 * d,
            d + self.expansion,
            2 * d,
        ]
        .iter()
        .any(|&v| v > u16::MAX as usize);
        if too_big {
            return Err(Error::config("configuration values must fit in 16 bits"));
        }
        let ok = match self.variant {
            Variant::Full => self.fusion == Fusion::SFmbConv,
            Variant::Cdc => true,
            Variant::Css | Variant::ConvMixerBaseline => self.fusion == Fusion::None,
        };
        if !ok {
            return Err(Error::config(format!(
                "fusion `{}` is not available for variant `{}`",
                self.fusion, self.variant
            )));
        }
        Ok(())
    }

    /// Number of plain layers in an ablation trunk.
    pub fn trunk_layers(&self) -> usize {
        2 * self.n_fmb
    }

    /// Whether the trunk is organised as feature mixing blocks.
    pub fn uses_blocks(&self) -> bool {
        self.fusion != Fusion::None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        in_ch: usize,
        out_ch: usize,
        k: usize,
        groups: usize,
    },
    Norm {
        channels: usize,
    },
}

/// One parameterised layer of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    /// Working resolution as a multiple of the LR grid (per axis).
    pub res_mult: usize,
}

impl Layer {
    fn conv(
        name: String,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        groups: usize,
        res_mult: usize,
    ) -> Self {
        Layer {
            name,
            kind: LayerKind::Conv {
                in_ch,
                out_ch,
                k,
                groups,
            },
            res_mult,
        }
    }

    fn norm(name: String, channels: usize) -> Self {
        Layer {
            name,
            kind: LayerKind::Norm { channels },
            res_mult: 1,
        }
    }

    /// `(name, kind, shape)` of every tensor this layer owns, in canonical order.
    pub fn tensors(&self) -> Vec<(String, ParamKind, Shape)> {
        match self.kind {
            LayerKind::Conv {
                in_ch,
                out_ch,
                k,
                groups,
            } => vec![
                (
                    format!("{}.coeffs", self.name),
                    ParamKind::Kernel,
                    Shape::new(out_ch, in_ch / groups, k, k),
                ),
                (
                    format!("{}.bias", self.name),
                    ParamKind::Vector,
                    Shape::new(1, out_ch, 1, 1),
                ),
            ],
            LayerKind::Norm { channels } => vec![(
                format!("{}.gamma", self.name),
                ParamKind::Vector,
                Shape::new(1, channels, 1, 1),
            )],
        }
    }

    /// Fan-in of a convolution (input channels per group times kernel area).
    pub fn fan_in(&self) -> Option<usize> {
        match self.kind {
            LayerKind::Conv {
                in_ch, k, groups, ..
            } => Some(in_ch / groups * k * k),
            LayerKind::Norm { .. } => None,
        }
    }
}

pub fn projection_layers(prefix: &str, d: usize) -> Vec<Layer> {
    vec![
        Layer::norm(format!("{prefix}.norm"), d),
        Layer::conv(format!("{prefix}.w0"), d / 2, d, 1, 1, 1),
        Layer::conv(format!("{prefix}.w1"), d, d / 2, 1, 1, 1),
    ]
}

fn depthwise_layer(prefix: &str, d: usize, k: usize) -> Layer {
    Layer::conv(format!("{prefix}.dw"), d, d, k, d, 1)
}

pub fn mixer_layers(prefix: &str, d: usize, k: usize) -> Vec<Layer> {
    let mut v = projection_layers(&format!("{prefix}.proj_in"), d);
    v.push(depthwise_layer(prefix, d, k));
    v.extend(projection_layers(&format!("{prefix}.proj_out"), d));
    v
}

pub fn fusion_layers(prefix: &str, d: usize, expansion: usize, fusion: Fusion) -> Vec<Layer> {
    let p = |s: &str| format!("{prefix}.fuse.{s}");
    match fusion {
        Fusion::None => vec![],
        Fusion::Conv | Fusion::SConv => vec![Layer::conv(p("conv"), d, d, 3, 1, 1)],
        Fusion::CConv => vec![Layer::conv(p("conv"), 2 * d, d, 3, 1, 1)],
        Fusion::SResBlock => vec![
            Layer::conv(p("conv0"), d, d, 3, 1, 1),
            Layer::conv(p("conv1"), d, d, 3, 1, 1),
        ],
        Fusion::SFmbConv => vec![
            Layer::conv(p("expand"), d, d + expansion, 3, 1, 1),
            Layer::conv(p("reduce"), d + expansion, d, 1, 1, 1),
        ],
    }
}

pub fn block_layers(prefix: &str, cfg: &ModelConfig) -> Vec<Layer> {
    let (d, k) = (cfg.channels, cfg.dw_kernel);
    let mut v = mixer_layers(&format!("{prefix}.mixer.0"), d, k);
    v.extend(mixer_layers(&format!("{prefix}.mixer.1"), d, k));
    v.extend(fusion_layers(prefix, d, cfg.expansion, cfg.fusion));
    v
}

pub fn upsampler_layers(d: usize, scale: usize) -> Vec<Layer> {
    match scale {
        4 => vec![
            Layer::conv("up.0".into(), d, 4 * d, 1, 1, 1),
            Layer::conv("up.1".into(), d, 4 * d, 1, 1, 2),
        ],
        s => vec![Layer::conv("up.0".into(), d, s * s * d, 1, 1, 1)],
    }
}

/// Every parameterised layer in canonical order.
pub fn layers(cfg: &ModelConfig) -> Result<Vec<Layer>> {
    cfg.validate()?;
    let (d, k) = (cfg.channels, cfg.dw_kernel);
    let mut v = vec![Layer::conv("stem".into(), 3, d, 3, 1, 1)];
    match cfg.variant {
        _ if cfg.uses_blocks() => {
            for i in 0..cfg.n_fmb {
                v.extend(block_layers(&format!("fmb.{i}"), cfg));
            }
        }
        Variant::Full | Variant::Cdc => {
            for i in 0..cfg.trunk_layers() {
                v.extend(mixer_layers(&format!("layer.{i}"), d, k));
            }
        }
        Variant::Css => {
            for i in 0..cfg.trunk_layers() {
                let prefix = format!("layer.{i}");
                v.extend(projection_layers(&format!("{prefix}.proj"), d));
                v.push(depthwise_layer(&prefix, d, k));
            }
        }
        Variant::ConvMixerBaseline => {
            for i in 0..cfg.trunk_layers() {
                let prefix = format!("block.{i}");
                v.push(depthwise_layer(&prefix, d, k));
                v.push(Layer::norm(format!("{prefix}.norm"), d));
                v.push(Layer::conv(format!("{prefix}.fc0"), d, 2 * d, 1, 1, 1));
                v.push(Layer::conv(format!("{prefix}.fc1"), 2 * d, d, 1, 1, 1));
            }
        }
    }
    v.extend(upsampler_layers(d, cfg.scale));
    v.push(Layer::conv("head".into(), d, 3, 3, 1, cfg.scale));
    Ok(v)
}

/// Instantiates a parameter tree for `cfg` with deterministic initial values.
pub fn build<T: Real>(cfg: &ModelConfig, init_seed: u64) -> Result<ParamTree<T>> {
    crate::weights::init_params(cfg, init_seed)
}

fn conv<T: Real, G: Graph<T>>(g: &mut G, name: &str, x: &G::Var, groups: usize) -> Result<G::Var> {
    let w = g.param(&format!("{name}.coeffs"))?;
    let b = g.param(&format!("{name}.bias"))?;
    g.conv(x, &w, &b, groups)
}

/// `shuffle([W1(silu(W0(a))), b], 2) + x` where `(a, b) = split(layer_norm(x))`.
pub fn channel_projection<T: Real, G: Graph<T>>(
    g: &mut G,
    prefix: &str,
    x: &G::Var,
) -> Result<G::Var> {
    let gamma = g.param(&format!("{prefix}.norm.gamma"))?;
    let normed = g.layer_norm(x, &gamma)?;
    let (mixed, kept) = g.split(&normed)?;
    let h = conv(g, &format!("{prefix}.w0"), &mixed, 1)?;
    let h = g.silu(&h)?;
    let h = conv(g, &format!("{prefix}.w1"), &h, 1)?;
    let joined = g.concat(&h, &kept)?;
    let shuffled = g.shuffle(&joined, 2)?;
    g.add(&shuffled, x)
}

fn depthwise<T: Real, G: Graph<T>>(g: &mut G, prefix: &str, x: &G::Var) -> Result<G::Var> {
    let c = g.value(x).c();
    conv(g, &format!("{prefix}.dw"), x, c)
}

/// Projection, large-kernel depth-wise conv, projection.
pub fn shuffle_mixer_layer<T: Real, G: Graph<T>>(
    g: &mut G,
    prefix: &str,
    x: &G::Var,
) -> Result<G::Var> {
    let y = channel_projection(g, &format!("{prefix}.proj_in"), x)?;
    let y = depthwise(g, prefix, &y)?;
    channel_projection(g, &format!("{prefix}.proj_out"), &y)
}

/// Two mixer layers followed by the configured fusion stage.
pub fn feature_mixing_block<T: Real, G: Graph<T>>(
    g: &mut G,
    prefix: &str,
    x: &G::Var,
    fusion: Fusion,
) -> Result<G::Var> {
    let m = shuffle_mixer_layer(g, &format!("{prefix}.mixer.0"), x)?;
    let m = shuffle_mixer_layer(g, &format!("{prefix}.mixer.1"), &m)?;
    let p = |s: &str| format!("{prefix}.fuse.{s}");
    match fusion {
        Fusion::None => Ok(m),
        Fusion::Conv => conv(g, &p("conv"), &m, 1),
        Fusion::SConv => {
            let z = g.add(x, &m)?;
            conv(g, &p("conv"), &z, 1)
        }
        Fusion::CConv => {
            let z = g.concat(x, &m)?;
            conv(g, &p("conv"), &z, 1)
        }
        Fusion::SResBlock => {
            let z = g.add(x, &m)?;
            let h = conv(g, &p("conv0"), &z, 1)?;
            let h = g.silu(&h)?;
            let h = conv(g, &p("conv1"), &h, 1)?;
            g.add(&h, &z)
        }
        Fusion::SFmbConv => {
            let z = g.add(x, &m)?;
            let h = conv(g, &p("expand"), &z, 1)?;
            let h = g.silu(&h)?;
            let h = conv(g, &p("reduce"), &h, 1)?;
            g.add(&h, &z)
        }
    }
}

fn single_projection_layer<T: Real, G: Graph<T>>(
    g: &mut G,
    prefix: &str,
    x: &G::Var,
) -> Result<G::Var> {
    let y = channel_projection(g, &format!("{prefix}.proj"), x)?;
    depthwise(g, prefix, &y)
}

fn convmixer_block<T: Real, G: Graph<T>>(g: &mut G, prefix: &str, x: &G::Var) -> Result<G::Var> {
    let y = depthwise(g, prefix, x)?;
    let y = g.add(&y, x)?;
    let gamma = g.param(&format!("{prefix}.norm.gamma"))?;
    let h = g.layer_norm(&y, &gamma)?;
    let h = conv(g, &format!("{prefix}.fc0"), &h, 1)?;
    let h = g.silu(&h)?;
    let h = conv(g, &format!("{prefix}.fc1"), &h, 1)?;
    g.add(&h, &y)
}

/// 1x1 conv to `s^2 D` channels and pixel shuffle; x4 runs two x2 stages.
pub fn upsampler<T: Real, G: Graph<T>>(g: &mut G, x: &G::Var, scale: usize) -> Result<G::Var> {
    match scale {
        2 | 3 => {
            let y = conv(g, "up.0", x, 1)?;
            g.pixel_shuffle(&y, scale)
        }
        4 => {
            let y = conv(g, "up.0", x, 1)?;
            let y = g.pixel_shuffle(&y, 2)?;
            let y = conv(g, "up.1", &y, 1)?;
            g.pixel_shuffle(&y, 2)
        }
        s => Err(Error::config(format!(
            "upsampling factor {s} not in {{2, 3, 4}}"
        ))),
    }
}

pub fn trunk<T: Real, G: Graph<T>>(g: &mut G, cfg: &ModelConfig, x: &G::Var) -> Result<G::Var> {
    let blocks = if cfg.uses_blocks() {
        cfg.n_fmb
    } else {
        cfg.trunk_layers()
    };
    let mut h: Option<G::Var> = None;
    for i in 0..blocks {
        let cur = h.as_ref().unwrap_or(x);
        let next = match cfg.variant {
            _ if cfg.uses_blocks() => {
                feature_mixing_block(g, &format!("fmb.{i}"), cur, cfg.fusion)?
            }
            Variant::Full | Variant::Cdc => shuffle_mixer_layer(g, &format!("layer.{i}"), cur)?,
            Variant::Css => single_projection_layer(g, &format!("layer.{i}"), cur)?,
            Variant::ConvMixerBaseline => convmixer_block(g, &format!("block.{i}"), cur)?,
        };
        h = Some(next);
    }
    Ok(h.expect("trunk has at least one block"))
}

/// `bilinear(lr, s) + head(upsampler(trunk(stem(lr))))`.
pub fn forward_graph<T: Real, G: Graph<T>>(
    g: &mut G,
    cfg: &ModelConfig,
    lr: &G::Var,
) -> Result<G::Var> {
    cfg.validate()?;
    let c = g.value(lr).c();
    if c != 3 {
        return Err(Error::shape("forward", &[3], &[c]));
    }
    let feat = conv(g, "stem", lr, 1)?;
    let feat = trunk(g, cfg, &feat)?;
    let feat = upsampler(g, &feat, cfg.scale)?;
    let residual = conv(g, "head", &feat, 1)?;
    let base = g.bilinear(lr, cfg.scale)?;
    g.add(&base, &residual)
}

pub fn forward<T: Real>(
    tree: &ParamTree<T>,
    cfg: &ModelConfig,
    lr: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let mut g = Eager::new(tree);
    let input = std::borrow::Cow::Borrowed(lr);
    Ok(forward_graph(&mut g, cfg, &input)?.into_owned())
}

/// Forward pass recorded on a tape; returns the tape and the output node.
pub fn forward_taped<'a, T: Real>(
    tree: &'a ParamTree<T>,
    cfg: &ModelConfig,
    lr: Tensor4<T>,
) -> Result<(Tape<'a, T>, crate::graph::NodeId)> {
    let mut tape = Tape::new(tree);
    let input = tape.input(lr);
    let out = forward_graph(&mut tape, cfg, &input)?;
    Ok((tape, out))
}
