mod commands;
mod config;
mod error;
mod input;
mod metrics;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "vbgs", version, about = "Gaussian splats by closed-form variational Bayes")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Batch fit with coordinate ascent on an image, a PLY point cloud or a frame manifest.
    Fit(RunArgs),
    /// One conjugate update per image patch or manifest frame.
    Stream(RunArgs),
    /// Render a checkpoint.
    Render(RenderArgs),
    /// PSNR between a render and a reference image.
    Eval {
        render: PathBuf,
        reference: PathBuf,
    },
    /// Write a built-in synthetic data set.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
}

#[derive(Subcommand, Debug)]
enum SynthKind {
    /// A structured test image (image.ppm).
    Image {
        #[arg(long, default_value = "64x64")]
        size: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// RGBD views of a colored cube with a frame manifest.
    Cube {
        #[arg(long, default_value_t = 20)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// RGBD views of a room with one small box, from two panning cameras.
    Room {
        #[arg(long, default_value_t = 16)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// Options shared by `fit` and `stream`.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Image (.ppm/.png), point cloud (.ply) or frame manifest.
    pub input: PathBuf,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["random", "data"])]
    pub init: Option<String>,
    /// Enables reassignment of unused components with this fraction.
    #[arg(long)]
    pub reassign_fraction: Option<f64>,
    /// Patch size HxW for image streams.
    #[arg(long)]
    pub patch: Option<String>,
    /// assumed (uniform over known ranges) or empirical.
    #[arg(long, value_parser = ["assumed", "empirical"])]
    pub normalization: Option<String>,
    /// Spatial range LO,HI assumed for point clouds.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,
    /// Camera (JSON) for the final render of a 3D model.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Render background R,G,B in [0, 1].
    #[arg(long)]
    pub background: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Record wall-clock seconds in the metrics (makes them run-dependent).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    pub checkpoint: PathBuf,
    /// Output size WxH for 2D models.
    #[arg(long)]
    pub size: Option<String>,
    /// Camera (JSON), required for 3D models.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    pub background: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Output file name inside --out; .png selects PNG.
    #[arg(long, default_value = "render.ppm")]
    pub name: String,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure threads: {e}")))?;
    }
    match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Stream(args) => commands::stream(&args),
        Command::Render(args) => commands::render(&args),
        Command::Eval { render, reference } => commands::eval(&render, &reference),
        Command::Synth { kind } => match kind {
            SynthKind::Image { size, seed, out } => synth::image(&size, seed, &out),
            SynthKind::Cube { views, size, out } => synth::cube(views, size, &out),
            SynthKind::Room { views, size, out } => synth::room(views, size, &out),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vbgs: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
