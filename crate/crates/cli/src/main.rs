use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shufflemixer::{Fusion, ModelConfig, Variant};

mod commands;
mod image_io;

/// Exit status for command-line or configuration problems.
pub const EXIT_USAGE: u8 = 2;
/// Exit status for missing or malformed weights files.
pub const EXIT_WEIGHTS: u8 = 3;
/// Exit status for unreadable or unwritable images.
pub const EXIT_IMAGE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "shufflemixer",
    version,
    about = "Lightweight super-resolution toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    channels: usize,
    /// Depth-wise kernel size.
    #[arg(long, default_value_t = 7)]
    kernel: usize,
    /// Number of feature mixing blocks.
    #[arg(long, default_value_t = 5)]
    fmb: usize,
    #[arg(long, default_value_t = 4)]
    scale: usize,
    /// Extra channels in the fused MBConv expansion.
    #[arg(long, default_value_t = shufflemixer::model::DEFAULT_EXPANSION)]
    expansion: usize,
    /// full, cdc, css or convmixer_baseline.
    #[arg(long, default_value_t = Variant::Full)]
    variant: Variant,
    /// none, conv, s_conv, c_conv, s_resblock or s_fmbconv. Defaults to
    /// s_fmbconv for the full model and none otherwise.
    #[arg(long)]
    fusion: Option<Fusion>,
}

impl ModelArgs {
    pub fn config(&self) -> ModelConfig {
        let fusion = self.fusion.unwrap_or(match self.variant {
            Variant::Full => Fusion::SFmbConv,
            _ => Fusion::None,
        });
        ModelConfig {
            channels: self.channels,
            dw_kernel: self.kernel,
            n_fmb: self.fmb,
            scale: self.scale,
            expansion: self.expansion,
            variant: self.variant,
            fusion,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print per-layer parameter and MAC counts.
    Count {
        #[command(flatten)]
        model: ModelArgs,
        /// LR input size as WIDTHxHEIGHT; defaults to 1280x720 divided by the scale.
        #[arg(long)]
        lr_size: Option<String>,
        /// Tab-separated records instead of the aligned table.
        #[arg(long)]
        records: bool,
    },
    /// Write freshly initialized weights.
    Init {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Zero the final convolution so the network reduces to bilinear upscaling.
        #[arg(long)]
        zero_head: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Super-resolve one PNG image.
    Sr {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Bicubic downscale, cropping first to a size divisible by the scale.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Y-channel PSNR/SSIM of super-resolved LR images against HR references paired by file stem.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        lr_dir: PathBuf,
        #[arg(long)]
        hr_dir: PathBuf,
        /// Must match the scale stored in the weights file.
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Train on the PNG images of a directory.
    Train {
        /// key: value settings file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        /// Output directory for checkpoints and the loss log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare model gradients with finite differences in 64-bit.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 1)]
        fmb: usize,
    },
}

fn run(cli: Cli) -> Result<(), commands::Failure> {
    match cli.command {
        Command::Count {
            model,
            lr_size,
            records,
        } => commands::count(&model.config(), lr_size.as_deref(), records),
        Command::Init {
            model,
            seed,
            zero_head,
            out,
        } => commands::init(&model.config(), seed, zero_head, &out),
        Command::Sr {
            weights,
            input,
            output,
        } => commands::sr(&weights, &input, &output),
        Command::Degrade {
            input,
            scale,
            output,
        } => commands::degrade(&input, scale, &output),
        Command::Eval {
            weights,
            lr_dir,
            hr_dir,
            scale,
        } => commands::eval(&weights, &lr_dir, &hr_dir, scale),
        Command::Train {
            config,
            data_dir,
            out,
        } => commands::train(&config, &data_dir, &out),
        Command::Gradcheck { channels, fmb } => commands::gradcheck(channels, fmb),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
