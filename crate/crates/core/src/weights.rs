//! Deterministic initialization and the `SMXW` weights file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SMXW"  u16 version
//! u16 channels, dw_kernel, n_fmb, scale, expansion, variant, fusion
//! per tensor, in canonical order:
//!   u16 name_len, name bytes, u8 rank, u32 dims[rank], f32 payload[prod(dims)]
//! ```
//!
//! The record list is implied by the header configuration; anything after
//! the last expected record is rejected.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{layers, Fusion, Layer, LayerKind, ModelConfig, Variant};
use crate::params::{shape_for, ParamKind, ParamTree};
use crate::tensor::{Real, Tensor4};

pub const MAGIC: [u8; 4] = *b"SMXW";
pub const FORMAT_VERSION: u16 = 1;

/// Identifies the initialization stream; bump when the draw procedure changes.
pub const INIT_STREAM: &str = "smxw-init/chacha8/v1";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"SMXW\"")]
    BadMagic(Vec<u8>),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("file truncated in {0}")]
    Truncated(String),
    #[error("invalid configuration in header: {0}")]
    InvalidConfig(String),
    #[error("header configuration {found:?} does not match expected {expected:?}")]
    ConfigMismatch {
        expected: Box<ModelConfig>,
        found: Box<ModelConfig>,
    },
    #[error("expected tensor `{expected}`, found `{found}`")]
    NameMismatch { expected: String, found: String },
    #[error("tensor `{tensor}` has dims {found:?}, expected {expected:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor `{0}` contains non-finite values")]
    NonFinite(String),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn layer_rng(seed: u64, layer: &str) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(layer.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&fnv1a64(INIT_STREAM.as_bytes()).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Fan-in uniform coefficients, zero biases, unit norm scales.
///
/// Each layer draws from its own stream keyed by `(seed, layer name)`.
pub fn init_layers<T: Real>(layers: &[Layer], seed: u64) -> crate::Result<ParamTree<T>> {
    let mut tree = ParamTree::new();
    for layer in layers {
        let mut rng = layer_rng(seed, &layer.name);
        for (name, kind, shape) in layer.tensors() {
            let value = match (layer.kind, kind) {
                (LayerKind::Conv { .. }, ParamKind::Kernel) => {
                    let bound = (6.0 / layer.fan_in().unwrap_or(1) as f64).sqrt();
                    Tensor4::from_fn(shape, |_, _, _, _| {
                        T::lit((2.0 * rng.gen::<f64>() - 1.0) * bound)
                    })
                }
                (LayerKind::Conv { .. }, ParamKind::Vector) => Tensor4::zeros(shape),
                (LayerKind::Norm { .. }, _) => Tensor4::full(shape, T::one()),
            };
            tree.push(name, kind, value)?;
        }
    }
    Ok(tree)
}

pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> crate::Result<ParamTree<T>> {
    init_layers(&layers(cfg)?, seed)
}

fn header_fields(cfg: &ModelConfig) -> [u16; 7] {
    [
        cfg.channels as u16,
        cfg.dw_kernel as u16,
        cfg.n_fmb as u16,
        cfg.scale as u16,
        cfg.expansion as u16,
        cfg.variant.code(),
        cfg.fusion.code(),
    ]
}

/// Serializes `tree` (stored as 32-bit floats).
pub fn to_bytes<T: Real>(tree: &ParamTree<T>, cfg: &ModelConfig) -> Result<Vec<u8>, WeightsError> {
    cfg.validate()
        .map_err(|e| WeightsError::InvalidConfig(e.to_string()))?;
    let expected: ParamTree<f32> =
        init_params(cfg, 0).map_err(|e| WeightsError::InvalidConfig(e.to_string()))?;
    if !expected.same_layout(tree) {
        return Err(WeightsError::InvalidConfig(
            "parameter tree does not match configuration".into(),
        ));
    }
    let mut out = Vec::with_capacity(32 + tree.scalar_count() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for f in header_fields(cfg) {
        out.extend_from_slice(&f.to_le_bytes());
    }
    for p in tree.iter() {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let dims = p.dims();
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, ctx: &str) -> Result<&'a [u8], WeightsError> {
        if self.buf.len() - self.pos < n {
            return Err(WeightsError::Truncated(ctx.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, ctx: &str) -> Result<u16, WeightsError> {
        let b = self.take(2, ctx)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, ctx: &str) -> Result<u32, WeightsError> {
        let b = self.take(4, ctx)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse_header(r: &mut Reader<'_>) -> Result<ModelConfig, WeightsError> {
    let magic = r.take(4, "header")?;
    if magic != MAGIC {
        return Err(WeightsError::BadMagic(magic.to_vec()));
    }
    let version = r.u16("header")?;
    if version != FORMAT_VERSION {
        return Err(WeightsError::UnsupportedVersion(version));
    }
    let mut f = [0u16; 7];
    for v in f.iter_mut() {
        *v = r.u16("header")?;
    }
    let bad =
        |what: &str, code: u16| WeightsError::InvalidConfig(format!("unknown {what} code {code}"));
    let cfg = ModelConfig {
        channels: f[0] as usize,
        dw_kernel: f[1] as usize,
        n_fmb: f[2] as usize,
        scale: f[3] as usize,
        expansion: f[4] as usize,
        variant: Variant::from_code(f[5]).ok_or_else(|| bad("variant", f[5]))?,
        fusion: Fusion::from_code(f[6]).ok_or_else(|| bad("fusion", f[6]))?,
    };
    cfg.validate()
        .map_err(|e| WeightsError::InvalidConfig(e.to_string()))?;
    Ok(cfg)
}

/// Parses a complete weights image. No partial tree is ever returned.
pub fn from_bytes(buf: &[u8]) -> Result<(ParamTree<f32>, ModelConfig), WeightsError> {
    let mut r = Reader { buf, pos: 0 };
    let cfg = parse_header(&mut r)?;
    let expected: ParamTree<f32> =
        init_params(&cfg, 0).map_err(|e| WeightsError::InvalidConfig(e.to_string()))?;
    let mut tree = ParamTree::new();
    for p in expected.iter() {
        let ctx = format!("tensor `{}`", p.name);
        let name_len = r.u16(&ctx)? as usize;
        let name = r.take(name_len, &ctx)?;
        if name != p.name.as_bytes() {
            return Err(WeightsError::NameMismatch {
                expected: p.name.clone(),
                found: String::from_utf8_lossy(name).into_owned(),
            });
        }
        let rank = r.take(1, &ctx)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(&ctx)? as usize);
        }
        let want = p.dims();
        if dims != want {
            return Err(WeightsError::ShapeMismatch {
                tensor: p.name.clone(),
                expected: want,
                found: dims,
            });
        }
        let shape = shape_for(p.kind, &dims).expect("dims validated against layout");
        let payload = r.take(shape.len() * 4, &ctx)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(WeightsError::NonFinite(p.name.clone()));
        }
        let value = Tensor4::from_vec(shape, data).expect("length checked");
        tree.push(p.name.clone(), p.kind, value)
            .expect("names unique in layout");
    }
    if r.pos != buf.len() {
        return Err(WeightsError::TrailingBytes(buf.len() - r.pos));
    }
    Ok((tree, cfg))
}

pub fn save<T: Real>(
    tree: &ParamTree<T>,
    cfg: &ModelConfig,
    path: impl AsRef<Path>,
) -> Result<(), WeightsError> {
    fs::write(path, to_bytes(tree, cfg)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(ParamTree<f32>, ModelConfig), WeightsError> {
    from_bytes(&fs::read(path)?)
}

/// Loads and checks that the header matches `cfg`.
pub fn load_expecting(
    path: impl AsRef<Path>,
    cfg: &ModelConfig,
) -> Result<ParamTree<f32>, WeightsError> {
    let (tree, found) = load(path)?;
    if found != *cfg {
        return Err(WeightsError::ConfigMismatch {
            expected: Box::new(*cfg),
            found: Box::new(found),
        });
    }
    Ok(tree)
}

/// FNV-1a checksum of the serialized form.
pub fn checksum<T: Real>(tree: &ParamTree<T>, cfg: &ModelConfig) -> Result<u64, WeightsError> {
    Ok(fnv1a64(&to_bytes(tree, cfg)?))
}
