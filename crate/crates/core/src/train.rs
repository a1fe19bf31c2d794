//! Loss, patch sampling, Adam and the training loop.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{forward, forward_taped, Fusion, ModelConfig, Variant};
use crate::ops::{bicubic_resize, l1_loss, l1_loss_vjp};
use crate::params::ParamTree;
use crate::spectral::{frequency_loss, frequency_loss_vjp};
use crate::tensor::{Real, Shape, Tensor4};
use crate::weights::init_params;

/// Stream id separating the patch sampler from other users of the seed.
const SAMPLER_STREAM: u64 = 0x5341_4d50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub batch: usize,
    /// LR patch side.
    pub patch: usize,
    pub iters: usize,
    pub lambda: f64,
    pub seed: u64,
    pub scale: usize,
}

impl TrainConfig {
    /// Small batches and patches for a few hundred CPU iterations.
    pub fn desk(scale: usize) -> Self {
        TrainConfig {
            lr: 5e-4,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch: 8,
            patch: 32,
            iters: 500,
            lambda: 0.1,
            seed: 0,
            scale,
        }
    }

    /// The full-size protocol: 64 patches of 64x64 for 300K steps.
    pub fn full(scale: usize) -> Self {
        TrainConfig {
            batch: 64,
            patch: 64,
            iters: 300_000,
            ..Self::desk(scale)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config(format!(
                "betas ({b1}, {b2}) must lie in [0, 1)"
            )));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda must be a non-negative number"));
        }
        if self.batch == 0 || self.patch == 0 {
            return Err(Error::config("batch and patch must be positive"));
        }
        if !(2..=4).contains(&self.scale) {
            return Err(Error::config(format!(
                "scale {} not in {{2, 3, 4}}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// `l1(sr, gt) + lambda * frequency_loss(sr, gt)`.
pub fn total_loss<T: Real>(sr: &Tensor4<T>, gt: &Tensor4<T>, lambda: f64) -> Result<f64> {
    Ok(l1_loss(sr, gt)? + lambda * frequency_loss(sr, gt)?)
}

/// Gradient of [`total_loss`] with respect to `sr`.
pub fn total_loss_vjp<T: Real>(
    sr: &Tensor4<T>,
    gt: &Tensor4<T>,
    lambda: f64,
) -> Result<Tensor4<T>> {
    let pixel = l1_loss_vjp(sr, gt, T::one())?;
    if lambda == 0.0 {
        return Ok(pixel);
    }
    pixel.add(&frequency_loss_vjp(sr, gt, T::lit(lambda))?)
}

/// HR images with their bicubic LR counterparts.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    scale: usize,
    pairs: Vec<(Tensor4<T>, Tensor4<T>)>,
}

impl<T: Real> Dataset<T> {
    /// Crops each HR image to a multiple of `scale` and downscales it.
    pub fn from_hr(images: Vec<Tensor4<T>>, scale: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::config("dataset is empty"));
        }
        let mut pairs = Vec::with_capacity(images.len());
        for hr in images {
            if hr.n() != 1 || hr.c() != 3 {
                return Err(Error::shape(
                    "dataset image",
                    &[1, 3, hr.h(), hr.w()],
                    &hr.dims(),
                ));
            }
            let hr = crop_to_multiple(&hr, scale)?;
            let lr = bicubic_resize(&hr, 1.0 / scale as f64)?;
            pairs.push((lr, hr));
        }
        Ok(Dataset { scale, pairs })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(lr, hr)` pairs.
    pub fn pairs(&self) -> &[(Tensor4<T>, Tensor4<T>)] {
        &self.pairs
    }

    /// Smallest LR side over all images.
    pub fn min_lr_side(&self) -> usize {
        self.pairs
            .iter()
            .map(|(lr, _)| lr.h().min(lr.w()))
            .min()
            .unwrap_or(0)
    }
}

/// Top-left crop to the largest size divisible by `scale`.
pub fn crop_to_multiple<T: Real>(img: &Tensor4<T>, scale: usize) -> Result<Tensor4<T>> {
    let (h, w) = (img.h() / scale * scale, img.w() / scale * scale);
    if h == 0 || w == 0 {
        return Err(Error::config(format!(
            "{}x{} image is smaller than the scale {scale}",
            img.h(),
            img.w()
        )));
    }
    if (h, w) == (img.h(), img.w()) {
        return Ok(img.clone());
    }
    Ok(Tensor4::from_fn(
        Shape::new(img.n(), img.c(), h, w),
        |i, j, y, x| img.at(i, j, y, x),
    ))
}

/// One training sample: LR crop origin, then an optional horizontal flip
/// followed by `rot` counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchDraw {
    pub image: usize,
    pub y: usize,
    pub x: usize,
    pub flip: bool,
    pub rot: u8,
}

impl PatchDraw {
    pub fn random<T: Real>(
        dataset: &Dataset<T>,
        patch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let image = rng.gen_range(0..dataset.len());
        let lr = &dataset.pairs[image].0;
        if patch > lr.h() || patch > lr.w() {
            return Err(Error::config(format!(
                "patch {patch} does not fit a {}x{} LR image",
                lr.h(),
                lr.w()
            )));
        }
        Ok(PatchDraw {
            image,
            y: rng.gen_range(0..=lr.h() - patch),
            x: rng.gen_range(0..=lr.w() - patch),
            flip: rng.gen_bool(0.5),
            rot: rng.gen_range(0..4),
        })
    }

    /// Aligned `(lr, hr)` patches with the geometric transform applied to both.
    pub fn extract<T: Real>(&self, dataset: &Dataset<T>, patch: usize) -> (Tensor4<T>, Tensor4<T>) {
        let (lr, hr) = &dataset.pairs[self.image];
        let s = dataset.scale;
        let lr_crop = crop(lr, self.y, self.x, patch);
        let hr_crop = crop(hr, self.y * s, self.x * s, patch * s);
        (self.transform(&lr_crop), self.transform(&hr_crop))
    }

    fn transform<T: Real>(&self, t: &Tensor4<T>) -> Tensor4<T> {
        let t = if self.flip {
            flip_horizontal(t)
        } else {
            t.clone()
        };
        rotate_quarter(&t, self.rot)
    }
}

fn crop<T: Real>(t: &Tensor4<T>, y0: usize, x0: usize, side: usize) -> Tensor4<T> {
    Tensor4::from_fn(Shape::new(t.n(), t.c(), side, side), |i, j, y, x| {
        t.at(i, j, y0 + y, x0 + x)
    })
}

pub fn flip_horizontal<T: Real>(t: &Tensor4<T>) -> Tensor4<T> {
    let w = t.w();
    Tensor4::from_fn(t.shape(), |i, j, y, x| t.at(i, j, y, w - 1 - x))
}

/// Rotates by `k` counter-clockwise quarter turns.
pub fn rotate_quarter<T: Real>(t: &Tensor4<T>, k: u8) -> Tensor4<T> {
    let (n, c, h, w) = (t.n(), t.c(), t.h(), t.w());
    match k % 4 {
        0 => t.clone(),
        1 => Tensor4::from_fn(Shape::new(n, c, w, h), |i, j, y, x| {
            t.at(i, j, x, w - 1 - y)
        }),
        2 => Tensor4::from_fn(t.shape(), |i, j, y, x| t.at(i, j, h - 1 - y, w - 1 - x)),
        _ => Tensor4::from_fn(Shape::new(n, c, w, h), |i, j, y, x| {
            t.at(i, j, h - 1 - x, y)
        }),
    }
}

/// Draws `cfg.batch` aligned patch pairs stacked along the batch axis.
pub fn sample_batch<T: Real>(
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    if cfg.scale != dataset.scale {
        return Err(Error::config(format!(
            "training scale {} does not match dataset scale {}",
            cfg.scale, dataset.scale
        )));
    }
    let mut lrs = Vec::with_capacity(cfg.batch);
    let mut hrs = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let (lr, hr) = PatchDraw::random(dataset, cfg.patch, rng)?.extract(dataset, cfg.patch);
        lrs.push(lr);
        hrs.push(hr);
    }
    Ok((Tensor4::stack(&lrs)?, Tensor4::stack(&hrs)?))
}

pub fn sampler_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLER_STREAM);
    rng
}

/// First and second moment estimates mirroring a parameter tree.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: ParamTree<T>,
    pub v: ParamTree<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(tree: &ParamTree<T>) -> Self {
        AdamState {
            m: tree.zeros_like(),
            v: tree.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Real>(
    tree: &mut ParamTree<T>,
    grads: &ParamTree<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let layout_ok =
        tree.same_layout(grads) && tree.same_layout(&state.m) && tree.same_layout(&state.v);
    if !layout_ok {
        return Err(Error::shape(
            "adam_step",
            &[tree.scalar_count()],
            &[grads.scalar_count()],
        ));
    }
    state.t += 1;
    let (b1, b2) = cfg.betas;
    let t = state.t as i32;
    let step = T::lit(cfg.lr / (1.0 - b1.powi(t)));
    let v_corr = T::lit(1.0 / (1.0 - b2.powi(t)));
    let (b1, b2, eps) = (T::lit(b1), T::lit(b2), T::lit(cfg.adam_eps));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let params = tree
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()));
    for ((p, g), (m, v)) in params {
        let slots = p.value.data_mut().iter_mut().zip(g.value.data()).zip(
            m.value
                .data_mut()
                .iter_mut()
                .zip(v.value.data_mut().iter_mut()),
        );
        for ((p, &g), (m, v)) in slots {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *p = *p - step * *m / ((*v * v_corr).sqrt() + eps);
        }
    }
    Ok(())
}

/// Loss and parameter gradients for one `(lr, hr)` batch.
pub fn loss_and_grads<T: Real>(
    tree: &ParamTree<T>,
    cfg: &ModelConfig,
    lr: &Tensor4<T>,
    hr: &Tensor4<T>,
    lambda: f64,
) -> Result<(f64, ParamTree<T>)> {
    let (tape, out) = forward_taped(tree, cfg, lr.clone())?;
    let sr = crate::graph::Graph::value(&tape, &out).clone();
    let loss = total_loss(&sr, hr, lambda)?;
    let cot = total_loss_vjp(&sr, hr, lambda)?;
    Ok((loss, tape.backward(out, cot)?))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub tree: ParamTree<T>,
    pub history: Vec<f64>,
}

/// Trains a freshly initialized tree; `init_params(cfg, tcfg.seed)` is the
/// starting point.
pub fn train_loop(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    dataset: &Dataset<f32>,
) -> Result<TrainOutcome<f32>> {
    let tree = init_params(cfg, tcfg.seed)?;
    train_from(tree, cfg, tcfg, dataset, |_, _, _| Ok(()))
}

/// Runs `tcfg.iters` steps starting from `tree`; `on_step(step, loss, tree)`
/// sees the tree after each update (steps count from 1).
pub fn train_from<T: Real>(
    mut tree: ParamTree<T>,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    dataset: &Dataset<T>,
    mut on_step: impl FnMut(usize, f64, &ParamTree<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    tcfg.validate()?;
    if cfg.scale != tcfg.scale {
        return Err(Error::config(format!(
            "model scale {} differs from training scale {}",
            cfg.scale, tcfg.scale
        )));
    }
    if dataset.is_empty() {
        return Err(Error::config("dataset is empty"));
    }
    if tcfg.patch > dataset.min_lr_side() {
        return Err(Error::config(format!(
            "patch {} (HR {}) exceeds the smallest image",
            tcfg.patch,
            tcfg.patch * tcfg.scale
        )));
    }
    let mut rng = sampler_rng(tcfg.seed);
    let mut state = AdamState::new(&tree);
    let mut history = Vec::with_capacity(tcfg.iters);
    for step in 1..=tcfg.iters {
        let (lr, hr) = sample_batch(dataset, tcfg, &mut rng)?;
        let (loss, grads) = loss_and_grads(&tree, cfg, &lr, &hr, tcfg.lambda)?;
        if !loss.is_finite() {
            return Err(Error::config(format!("loss diverged at step {step}")));
        }
        adam_step(&mut tree, &grads, &mut state, tcfg)?;
        history.push(loss);
        on_step(step, loss, &tree)?;
    }
    Ok(TrainOutcome { tree, history })
}

/// Mean Y-channel PSNR of full-image reconstructions over the dataset.
pub fn dataset_psnr<T: Real>(
    tree: &ParamTree<T>,
    cfg: &ModelConfig,
    dataset: &Dataset<T>,
) -> Result<f64> {
    let proto = crate::metrics::EvalProtocol::for_scale(dataset.scale);
    let mut total = 0.0;
    for (lr, hr) in &dataset.pairs {
        let sr = forward(tree, cfg, lr)?;
        let a = crate::metrics::prepare(&sr, &proto)?;
        let b = crate::metrics::prepare(hr, &proto)?;
        total += crate::metrics::psnr(&a, &b, &proto)?;
    }
    Ok(total / dataset.len() as f64)
}

/// `step\tloss` lines with a header.
pub fn format_loss_log(history: &[f64]) -> String {
    let mut out = String::from("step\tloss\n");
    for (i, loss) in history.iter().enumerate() {
        out.push_str(&format!("{}\t{loss:.8}\n", i + 1));
    }
    out
}

/// Procedural RGB test images in `[0, 1]`: gratings, a colour ramp and
/// hard-edged shapes.
pub fn synthetic_images(count: usize, side: usize, seed: u64) -> Vec<Tensor4<f32>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            synthetic_image(side, &mut rng)
        })
        .collect()
}

fn synthetic_image(side: usize, rng: &mut ChaCha8Rng) -> Tensor4<f32> {
    use std::f64::consts::TAU;
    let base: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let ramp: [f64; 3] = [
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
    ];
    let gratings: Vec<(f64, f64, f64, [f64; 3])> = (0..2)
        .map(|_| {
            let angle = rng.gen_range(0.0..TAU);
            let freq = rng.gen_range(0.02..0.2);
            let phase = rng.gen_range(0.0..TAU);
            let amp = [
                rng.gen_range(0.0..0.25),
                rng.gen_range(0.0..0.25),
                rng.gen_range(0.0..0.25),
            ];
            (angle, freq, phase, amp)
        })
        .collect();
    let s = side as f64;
    let shapes: Vec<(bool, f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            let disk = rng.gen_bool(0.5);
            let (cy, cx) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
            let r = rng.gen_range(0.08 * s..0.25 * s);
            (disk, cy, cx, r, [rng.gen(), rng.gen(), rng.gen()])
        })
        .collect();
    Tensor4::from_fn(Shape::new(1, 3, side, side), |_, c, y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let mut v = base[c] * 0.6 + 0.2 + ramp[c] * (xf + yf) / (2.0 * s);
        for (angle, freq, phase, amp) in &gratings {
            let t = xf * angle.cos() + yf * angle.sin();
            v += amp[c] * (TAU * freq * t + phase).sin();
        }
        for (disk, cy, cx, r, color) in &shapes {
            let inside = if *disk {
                (yf - cy).powi(2) + (xf - cx).powi(2) <= r * r
            } else {
                (yf - cy).abs() <= *r && (xf - cx).abs() <= r * 0.6
            };
            if inside {
                v = 0.3 * v + 0.7 * color[c];
            }
        }
        v.clamp(0.0, 1.0) as f32
    })
}

/// Model and optimizer settings read from a key:value file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl RunConfig {
    /// Parses `key: value` lines; `#` starts a comment. Missing keys keep
    /// the tiny model and desk training defaults.
    ///
    /// Keys: channels, kernel, fmb, expansion, variant, fusion, scale, lr,
    /// beta1, beta2, adam_eps, batch, patch, iters, lambda, seed,
    /// checkpoint_every.
    pub fn parse(text: &str) -> Result<Self> {
        let mut model = ModelConfig::tiny(2);
        let mut train = TrainConfig::desk(2);
        let mut checkpoint_every = 0;
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::config(format!("line {lineno}: {msg}"));
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| bad(format!("expected `key: value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(bad(format!("duplicate key `{key}`")));
            }
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|e| bad(format!("`{key}`: {e}")))
            };
            let float = || {
                value
                    .parse::<f64>()
                    .map_err(|e| bad(format!("`{key}`: {e}")))
            };
            match key {
                "channels" => model.channels = int()?,
                "kernel" => model.dw_kernel = int()?,
                "fmb" => model.n_fmb = int()?,
                "expansion" => model.expansion = int()?,
                "variant" => {
                    model.variant = value.parse::<Variant>().map_err(|e| bad(e.to_string()))?
                }
                "fusion" => {
                    model.fusion = value.parse::<Fusion>().map_err(|e| bad(e.to_string()))?
                }
                "scale" => {
                    model.scale = int()?;
                    train.scale = model.scale;
                }
                "lr" => train.lr = float()?,
                "beta1" => train.betas.0 = float()?,
                "beta2" => train.betas.1 = float()?,
                "adam_eps" => train.adam_eps = float()?,
                "batch" => train.batch = int()?,
                "patch" => train.patch = int()?,
                "iters" => train.iters = int()?,
                "lambda" => train.lambda = float()?,
                "seed" => {
                    train.seed = value
                        .parse::<u64>()
                        .map_err(|e| bad(format!("`{key}`: {e}")))?
                }
                "checkpoint_every" => checkpoint_every = int()?,
                _ => return Err(bad(format!("unknown key `{key}`"))),
            }
        }
        model.validate()?;
        train.validate()?;
        Ok(RunConfig {
            model,
            train,
            checkpoint_every,
        })
    }
}

/// Result of comparing tape gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter holding the worst scalar.
    pub worst: String,
    pub checked: usize,
}

/// Denominator floor for the relative error of near-zero gradients.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

/// The small configuration used for gradient checks: 8 channels, one block, x2.
pub fn grad_check_config() -> ModelConfig {
    ModelConfig {
        channels: 8,
        n_fmb: 1,
        ..ModelConfig::tiny(2)
    }
}

/// Compares every parameter gradient of the total loss (lambda 0.1) on a
/// random 8x8 input against central differences with step `eps`.
pub fn grad_check(cfg: &ModelConfig, eps: f64) -> Result<GradCheck> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let side = 8;
    let lr = Tensor4::from_fn(Shape::new(1, 3, side, side), |_, _, _, _| {
        rng.gen_range(0.0..1.0)
    });
    let hs = side * cfg.scale;
    let hr = Tensor4::from_fn(Shape::new(1, 3, hs, hs), |_, _, _, _| {
        rng.gen_range(0.0..1.0)
    });
    let lambda = 0.1;
    let mut tree: ParamTree<f64> = init_params(cfg, 11)?;
    // Non-trivial norm scales and biases so their gradients are exercised.
    for p in tree.iter_mut() {
        if p.kind == crate::params::ParamKind::Vector {
            for v in p.value.data_mut() {
                *v += rng.gen_range(-0.2..0.2);
            }
        }
    }
    let (_, grads) = loss_and_grads(&tree, cfg, &lr, &hr, lambda)?;
    let loss_at = |tree: &ParamTree<f64>| -> Result<f64> {
        total_loss(&forward(tree, cfg, &lr)?, &hr, lambda)
    };
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for p in 0..tree.len() {
        let name = grads.entry(p).name.clone();
        for k in 0..tree.entry(p).value.len() {
            let orig = tree.entry(p).value.data()[k];
            tree.entry_mut(p).value.data_mut()[k] = orig + eps;
            let up = loss_at(&tree)?;
            tree.entry_mut(p).value.data_mut()[k] = orig - eps;
            let down = loss_at(&tree)?;
            tree.entry_mut(p).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(grads.entry(p).value.data()[k], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = name.clone();
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
