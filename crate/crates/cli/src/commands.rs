use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use shufflemixer::complexity::{lr_size_for_hr, report};
use shufflemixer::metrics::{evaluate_pair, quantize_8bit, EvalProtocol};
use shufflemixer::ops::bicubic_resize;
use shufflemixer::train::{
    crop_to_multiple, format_loss_log, grad_check, train_from, Dataset, RunConfig,
};
use shufflemixer::weights::{self, checksum, init_params};
use shufflemixer::{forward, ModelConfig, ParamTree, Tensor4};

use crate::image_io::{list_pngs, read_rgb, write_rgb};
use crate::{EXIT_IMAGE, EXIT_USAGE, EXIT_WEIGHTS};

/// An error together with the process exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn usage(msg: String) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error: anyhow!(msg),
    }
}

fn parse_size(s: &str) -> Option<(usize, usize)> {
    let (w, h) = s.split_once(['x', 'X'])?;
    let (w, h) = (w.trim().parse().ok()?, h.trim().parse().ok()?);
    (w > 0 && h > 0).then_some((w, h))
}

pub fn count(cfg: &ModelConfig, lr_size: Option<&str>, records: bool) -> Result<(), Failure> {
    cfg.validate().exit_with(EXIT_USAGE)?;
    let (h, w) = match lr_size {
        Some(s) => {
            let (w, h) = parse_size(s)
                .ok_or_else(|| usage(format!("--lr-size `{s}` is not WIDTHxHEIGHT")))?;
            (h, w)
        }
        None => lr_size_for_hr(720, 1280, cfg.scale),
    };
    let rep = report(cfg, h, w).exit_with(EXIT_USAGE)?;
    if records {
        print!("{}", rep.to_records());
    } else {
        print!("{}", rep.to_table());
    }
    Ok(())
}

pub fn init(cfg: &ModelConfig, seed: u64, zero_head: bool, out: &Path) -> Result<(), Failure> {
    let mut tree: ParamTree<f32> = init_params(cfg, seed).exit_with(EXIT_USAGE)?;
    if zero_head {
        tree.get_mut("head.coeffs")
            .map_err(anyhow::Error::from)?
            .data_mut()
            .fill(0.0);
    }
    weights::save(&tree, cfg, out).exit_with(EXIT_WEIGHTS)?;
    println!(
        "wrote {} ({} parameters, checksum {:016x})",
        out.display(),
        tree.scalar_count(),
        checksum(&tree, cfg).exit_with(EXIT_WEIGHTS)?
    );
    Ok(())
}

fn upscale(
    tree: &ParamTree<f32>,
    cfg: &ModelConfig,
    lr: &Tensor4<f32>,
) -> Result<Tensor4<f32>, Failure> {
    forward(tree, cfg, lr)
        .context("forward pass failed")
        .map_err(Failure::from)
}

pub fn sr(weights_path: &Path, input: &Path, output: &Path) -> Result<(), Failure> {
    let (tree, cfg) = weights::load(weights_path)
        .with_context(|| format!("cannot load weights {}", weights_path.display()))
        .exit_with(EXIT_WEIGHTS)?;
    let lr = read_rgb(input).exit_with(EXIT_IMAGE)?;
    let sr = upscale(&tree, &cfg, &lr)?;
    write_rgb(output, &sr).exit_with(EXIT_IMAGE)?;
    Ok(())
}

pub fn degrade(input: &Path, scale: usize, output: &Path) -> Result<(), Failure> {
    if scale == 0 {
        return Err(usage("--scale must be positive".into()));
    }
    let hr = read_rgb(input).exit_with(EXIT_IMAGE)?;
    let hr = crop_to_multiple(&hr, scale).exit_with(EXIT_USAGE)?;
    let lr = bicubic_resize(&hr, 1.0 / scale as f64).map_err(anyhow::Error::from)?;
    write_rgb(output, &lr).exit_with(EXIT_IMAGE)?;
    Ok(())
}

pub fn eval(
    weights_path: &Path,
    lr_dir: &Path,
    hr_dir: &Path,
    scale: Option<usize>,
) -> Result<(), Failure> {
    let (tree, cfg) = weights::load(weights_path)
        .with_context(|| format!("cannot load weights {}", weights_path.display()))
        .exit_with(EXIT_WEIGHTS)?;
    if let Some(s) = scale.filter(|&s| s != cfg.scale) {
        return Err(usage(format!(
            "--scale {s} does not match the weights (x{})",
            cfg.scale
        )));
    }
    let proto = EvalProtocol::for_scale(cfg.scale);
    let lr_files = list_pngs(lr_dir).exit_with(EXIT_IMAGE)?;
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    for lr_path in &lr_files {
        let stem = lr_path
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let hr_path = hr_dir.join(format!("{stem}.png"));
        if !hr_path.is_file() {
            eprintln!("warning: no HR image for {stem}; skipped");
            continue;
        }
        let pair = read_rgb(lr_path).and_then(|lr| Ok((lr, read_rgb(&hr_path)?)));
        let (lr, hr) = match pair {
            Ok(p) => p,
            Err(e) => {
                eprintln!("warning: {e:#}; {stem} skipped");
                continue;
            }
        };
        let sr = quantize_8bit(&upscale(&tree, &cfg, &lr)?);
        let hr = crop_to_multiple(&hr, cfg.scale).map_err(anyhow::Error::from)?;
        if sr.shape() != hr.shape() {
            eprintln!(
                "warning: {stem}: SR is {}x{} but HR is {}x{}; skipped",
                sr.w(),
                sr.h(),
                hr.w(),
                hr.h()
            );
            continue;
        }
        match evaluate_pair(&sr, &hr, &proto) {
            Ok((p, s)) => rows.push((stem, p, s)),
            Err(e) => eprintln!("warning: {stem}: {e}; skipped"),
        }
    }
    for hr_path in list_pngs(hr_dir).exit_with(EXIT_IMAGE)? {
        let stem = hr_path.file_stem().unwrap_or_default().to_string_lossy();
        if !lr_dir.join(format!("{stem}.png")).is_file() {
            eprintln!("warning: no LR image for {stem}; skipped");
        }
    }
    if rows.is_empty() {
        return Err(usage(format!(
            "no scorable image pairs between {} and {}",
            lr_dir.display(),
            hr_dir.display()
        )));
    }
    // Values use the shortest round-trip form; a perfect match prints `inf`.
    let mut out = String::from("image\tpsnr_db\tssim\n");
    for (name, p, s) in &rows {
        let _ = writeln!(out, "{name}\t{p}\t{s}");
    }
    let n = rows.len() as f64;
    let mean_p = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mean_s = rows.iter().map(|r| r.2).sum::<f64>() / n;
    let _ = writeln!(out, "mean\t{mean_p}\t{mean_s}");
    print!("{out}");
    Ok(())
}

pub fn train(config: &Path, data_dir: &Path, out: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(config)
        .with_context(|| format!("cannot read {}", config.display()))
        .exit_with(EXIT_USAGE)?;
    let run = RunConfig::parse(&text)
        .with_context(|| format!("invalid config {}", config.display()))
        .exit_with(EXIT_USAGE)?;
    let files = list_pngs(data_dir).exit_with(EXIT_IMAGE)?;
    if files.is_empty() {
        return Err(usage(format!("no PNG images in {}", data_dir.display())));
    }
    let images = files
        .iter()
        .map(|p| read_rgb(p))
        .collect::<anyhow::Result<Vec<_>>>()
        .exit_with(EXIT_IMAGE)?;
    let dataset = Dataset::from_hr(images, run.model.scale).exit_with(EXIT_USAGE)?;
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(Failure::from)?;

    let cfg = run.model;
    let init: ParamTree<f32> = init_params(&cfg, run.train.seed).exit_with(EXIT_USAGE)?;
    let every = run.checkpoint_every;
    let mut save_error = None;
    let outcome = train_from(init, &cfg, &run.train, &dataset, |step, loss, tree| {
        if every > 0 && step % every == 0 {
            let path = out.join(format!("checkpoint_{step:06}.smxw"));
            if let Err(e) = weights::save(tree, &cfg, &path) {
                save_error = Some(
                    anyhow::Error::from(e).context(format!("cannot write {}", path.display())),
                );
                return Err(shufflemixer::Error::Config(
                    "checkpoint write failed".into(),
                ));
            }
            eprintln!("step {step}: loss {loss:.6}, saved {}", path.display());
        }
        Ok(())
    });
    if let Some(e) = save_error {
        return Err(Failure {
            code: EXIT_WEIGHTS,
            error: e,
        });
    }
    let outcome = outcome.exit_with(EXIT_USAGE)?;

    let final_path = out.join("final.smxw");
    weights::save(&outcome.tree, &cfg, &final_path).exit_with(EXIT_WEIGHTS)?;
    fs::write(out.join("loss.tsv"), format_loss_log(&outcome.history))
        .context("cannot write loss log")
        .map_err(Failure::from)?;
    println!(
        "trained {} steps; weights {} (checksum {:016x})",
        outcome.history.len(),
        final_path.display(),
        checksum(&outcome.tree, &cfg).exit_with(EXIT_WEIGHTS)?
    );
    Ok(())
}

pub fn gradcheck(channels: usize, fmb: usize) -> Result<(), Failure> {
    let cfg = ModelConfig {
        channels,
        n_fmb: fmb,
        ..shufflemixer::train::grad_check_config()
    };
    let report = grad_check(&cfg, 1e-5).exit_with(EXIT_USAGE)?;
    println!(
        "max relative error {:.3e} over {} parameters (worst: {})",
        report.max_rel_error, report.checked, report.worst
    );
    if report.max_rel_error < 1e-4 {
        Ok(())
    } else {
        Err(anyhow!("gradient check failed").into())
    }
}
