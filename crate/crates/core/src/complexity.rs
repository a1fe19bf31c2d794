//! Parameter and multiply-accumulate accounting.
//!
//! [`count_params`] and [`count_macs`] are closed-form sums over the block
//! structure; [`report`] walks the instantiated layer list. The two are
//! computed independently and must agree.
//!
//! MAC convention: a convolution costs `out * in_per_group * k^2` per output
//! pixel at its working resolution. Bias, normalization, activation,
//! elementwise, resize and shuffle operations cost nothing.

use std::fmt::Write as _;

use crate::error::Result;
use crate::model::{layers, Fusion, LayerKind, ModelConfig, Variant};

/// `(params, macs per output pixel)` of a stride-1 convolution.
fn conv(cin: u64, cout: u64, k: u64, groups: u64) -> (u64, u64) {
    let macs = cout * (cin / groups) * k * k;
    (macs + cout, macs)
}

fn sum(parts: &[(u64, u64)]) -> (u64, u64) {
    parts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
}

fn projection(d: u64) -> (u64, u64) {
    let (p, m) = sum(&[conv(d / 2, d, 1, 1), conv(d, d / 2, 1, 1)]);
    (p + d, m)
}

fn depthwise(d: u64, k: u64) -> (u64, u64) {
    conv(d, d, k, d)
}

fn mixer(d: u64, k: u64) -> (u64, u64) {
    sum(&[projection(d), depthwise(d, k), projection(d)])
}

fn fusion(d: u64, e: u64, f: Fusion) -> (u64, u64) {
    match f {
        Fusion::None => (0, 0),
        Fusion::Conv | Fusion::SConv => conv(d, d, 3, 1),
        Fusion::CConv => conv(2 * d, d, 3, 1),
        Fusion::SResBlock => sum(&[conv(d, d, 3, 1), conv(d, d, 3, 1)]),
        Fusion::SFmbConv => sum(&[conv(d, d + e, 3, 1), conv(d + e, d, 1, 1)]),
    }
}

/// Trunk `(params, macs per LR pixel)`.
fn trunk(cfg: &ModelConfig) -> (u64, u64) {
    let (d, k, e) = (
        cfg.channels as u64,
        cfg.dw_kernel as u64,
        cfg.expansion as u64,
    );
    let (unit, count) = if cfg.uses_blocks() {
        let m = mixer(d, k);
        (sum(&[m, m, fusion(d, e, cfg.fusion)]), cfg.n_fmb as u64)
    } else {
        let layer = match cfg.variant {
            Variant::Full | Variant::Cdc => mixer(d, k),
            Variant::Css => sum(&[projection(d), depthwise(d, k)]),
            Variant::ConvMixerBaseline => {
                let (p, m) = sum(&[depthwise(d, k), conv(d, 2 * d, 1, 1), conv(2 * d, d, 1, 1)]);
                (p + d, m)
            }
        };
        (layer, cfg.trunk_layers() as u64)
    };
    (unit.0 * count, unit.1 * count)
}

/// Exact scalar parameter count.
pub fn count_params(cfg: &ModelConfig) -> Result<u64> {
    cfg.validate()?;
    let d = cfg.channels as u64;
    let s = cfg.scale as u64;
    let up = if s == 4 {
        2 * conv(d, 4 * d, 1, 1).0
    } else {
        conv(d, s * s * d, 1, 1).0
    };
    Ok(conv(3, d, 3, 1).0 + trunk(cfg).0 + up + conv(d, 3, 3, 1).0)
}

/// Exact MAC count for an `lr_h x lr_w` input.
pub fn count_macs(cfg: &ModelConfig, lr_h: usize, lr_w: usize) -> Result<u64> {
    cfg.validate()?;
    let px = (lr_h * lr_w) as u64;
    let d = cfg.channels as u64;
    let s = cfg.scale as u64;
    let up = if s == 4 {
        let stage = conv(d, 4 * d, 1, 1).1;
        stage * px + stage * 4 * px
    } else {
        conv(d, s * s * d, 1, 1).1 * px
    };
    Ok((conv(3, d, 3, 1).1 + trunk(cfg).1) * px + up + conv(d, 3, 3, 1).1 * px * s * s)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplexityReport {
    pub config: ModelConfig,
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_macs: u64,
    pub lr_resolution: (usize, usize),
    pub hr_resolution: (usize, usize),
}

/// Per-layer accounting from the instantiated layer list.
pub fn report(cfg: &ModelConfig, lr_h: usize, lr_w: usize) -> Result<ComplexityReport> {
    let px = (lr_h * lr_w) as u64;
    let rows: Vec<LayerCost> = layers(cfg)?
        .into_iter()
        .map(|l| {
            let (params, macs) = match l.kind {
                LayerKind::Conv {
                    in_ch,
                    out_ch,
                    k,
                    groups,
                } => {
                    let (p, m) = conv(in_ch as u64, out_ch as u64, k as u64, groups as u64);
                    let r = l.res_mult as u64;
                    (p, m * px * r * r)
                }
                LayerKind::Norm { channels } => (channels as u64, 0),
            };
            LayerCost {
                name: l.name,
                params,
                macs,
            }
        })
        .collect();
    Ok(ComplexityReport {
        config: *cfg,
        total_params: rows.iter().map(|r| r.params).sum(),
        total_macs: rows.iter().map(|r| r.macs).sum(),
        layers: rows,
        lr_resolution: (lr_h, lr_w),
        hr_resolution: (lr_h * cfg.scale, lr_w * cfg.scale),
    })
}

/// Parameters in thousands, as displayed in comparison tables.
pub fn display_k(params: u64) -> f64 {
    params as f64 / 1e3
}

/// MACs in billions.
pub fn display_g(macs: u64) -> f64 {
    macs as f64 / 1e9
}

/// LR input size whose `scale`-times upscale covers an `hr_h x hr_w` target
/// (width rounded up, e.g. 1280 / 3 -> 427).
pub fn lr_size_for_hr(hr_h: usize, hr_w: usize, scale: usize) -> (usize, usize) {
    (hr_h.div_ceil(scale), hr_w.div_ceil(scale))
}

impl ComplexityReport {
    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let width = self
            .layers
            .iter()
            .map(|l| l.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "config: channels={} kernel={} fmb={} scale={} expansion={} variant={} fusion={}",
            c.channels, c.dw_kernel, c.n_fmb, c.scale, c.expansion, c.variant, c.fusion
        );
        let _ = writeln!(
            s,
            "lr: {}x{}  hr: {}x{}",
            self.lr_resolution.1, self.lr_resolution.0, self.hr_resolution.1, self.hr_resolution.0
        );
        let _ = writeln!(s, "{:<width$}  {:>10}  {:>16}", "layer", "params", "macs");
        for l in &self.layers {
            let _ = writeln!(s, "{:<width$}  {:>10}  {:>16}", l.name, l.params, l.macs);
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>10}  {:>16}",
            "total", self.total_params, self.total_macs
        );
        let _ = writeln!(
            s,
            "total params: {} ({:.0}K)  macs: {} ({:.2}G)",
            self.total_params,
            display_k(self.total_params),
            self.total_macs,
            display_g(self.total_macs)
        );
        s
    }

    /// One tab-separated record per layer, then a `total` record.
    pub fn to_records(&self) -> String {
        let mut s = String::from("name\tparams\tmacs\n");
        for l in &self.layers {
            let _ = writeln!(s, "{}\t{}\t{}", l.name, l.params, l.macs);
        }
        let _ = writeln!(s, "total\t{}\t{}", self.total_params, self.total_macs);
        s
    }
}
