use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spectrasweep::commands;
use spectrasweep::config::{ReconstructMethod, RunConfig};

/// Focal-sweep multispectral imaging pipeline.
#[derive(Parser)]
#[command(name = "spectrasweep", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured synthetic scene to a cube file.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the grayscale focal-sweep stack of a cube.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align, edge-detect, and difference a stack into the model input.
    Preprocess {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map a reference cube into the camera frame via feature matching and
    /// a robust homography.
    Register {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        /// Single-frame stack file holding the camera's reference view.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON diagnostics (homography, inliers, reprojection).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Reconstruct a spectral cube from a stack (variational) or from a
    /// preprocessed tensor plus a checkpoint (net).
    Reconstruct {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        method: Option<ReconstructMethod>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy network on a dataset manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON manifest listing input/target file pairs.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON dump of the per-epoch training loss.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Evaluate predictions against ground truths.
    Eval {
        #[arg(long, required = true, num_args = 1..)]
        pred: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        truth: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot one pixel's spectral signature as CSV and SVG.
    Plot {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Pixel as `x,y`.
        #[arg(long)]
        pixel: String,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_svg: PathBuf,
    },
    /// Full run: synth, simulate, preprocess, reconstruct, eval, manifest.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, u8> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::load(p).map_err(|e| {
            eprintln!("config error: {e:#}");
            EXIT_CONFIG
        }),
    }
}

fn parse_pixel(text: &str) -> Result<(usize, usize), u8> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        eprintln!("config error: --pixel expects `x,y`, got {text:?}");
        return Err(EXIT_CONFIG);
    }
    let x = parts[0].trim().parse().map_err(|_| {
        eprintln!("config error: bad pixel x {:?}", parts[0]);
        EXIT_CONFIG
    })?;
    let y = parts[1].trim().parse().map_err(|_| {
        eprintln!("config error: bad pixel y {:?}", parts[1]);
        EXIT_CONFIG
    })?;
    Ok((x, y))
}

fn stage(result: anyhow::Result<()>) -> Result<(), u8> {
    result.map_err(|e| {
        eprintln!("error: {e:#}");
        EXIT_STAGE
    })
}

fn run(cli: Cli) -> Result<(), u8> {
    match cli.command {
        Command::Synth { config, out } => {
            let config = load_config(&config)?;
            stage(commands::cmd_synth(&config, &out))
        }
        Command::Simulate { config, input, out } => {
            let config = load_config(&config)?;
            stage(commands::cmd_simulate(&config, &input, &out))
        }
        Command::Preprocess { config, input, out } => {
            let config = load_config(&config)?;
            stage(commands::cmd_preprocess(&config, &input, &out))
        }
        Command::Register {
            config,
            input,
            reference,
            out,
            report,
        } => {
            let config = load_config(&config)?;
            stage(commands::cmd_register(
                &config,
                &input,
                &reference,
                &out,
                report.as_deref(),
            ))
        }
        Command::Reconstruct {
            config,
            method,
            input,
            checkpoint,
            out,
        } => {
            let config = load_config(&config)?;
            let method = method.unwrap_or(config.method);
            stage(commands::cmd_reconstruct(
                &config,
                method,
                &input,
                checkpoint.as_deref(),
                &out,
            ))
        }
        Command::Train {
            config,
            data,
            out,
            curve,
        } => {
            let config = load_config(&config)?;
            stage(commands::cmd_train(&config, &data, &out, curve.as_deref()))
        }
        Command::Eval { pred, truth, out } => {
            stage(commands::cmd_eval(&pred, &truth, out.as_deref()).map(|_| ()))
        }
        Command::Plot {
            pred,
            truth,
            pixel,
            out_csv,
            out_svg,
        } => {
            let pixel = parse_pixel(&pixel)?;
            stage(commands::cmd_plot(&pred, &truth, pixel, &out_csv, &out_svg))
        }
        Command::Pipeline { config, out_dir } => {
            let config = load_config(&config)?;
            stage(commands::run_pipeline(&config, &out_dir).map(|_| ()))
        }
    }
}

fn main() -> ExitCode {
    spectrasweep::init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
