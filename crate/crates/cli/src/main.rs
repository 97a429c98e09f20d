//! `vsp`: dataset generation, augmentation preview, training, evaluation and
//! Grad-CAM explanations for the coarse viewpoint classifier.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 I/O error
//! (including missing or corrupt checkpoints), 4 numerical failure.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vsp_core::gradcam::HeadSelect;
use vsp_core::scene::Modality;

use crate::exit::Failure;

#[derive(Debug, Parser)]
#[command(name = "vsp", version, about = "Coarse spacecraft viewpoint classification")]
pub struct Cli {
    /// Worker threads for rendering and batch evaluation; 0 uses one per core.
    /// Results do not depend on this value.
    #[arg(long, global = true, env = "VSP_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the labelled training grid and its manifest.
    Generate(GenerateArgs),
    /// Render a constant-rate orbit as an ordered test sequence.
    Trajectory(TrajectoryArgs),
    /// Augmentation utilities.
    #[command(subcommand)]
    Augment(AugmentCommand),
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write a JSON report with plots.
    Eval(EvalArgs),
    /// Grad-CAM overlay for one image.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory for the images and manifest.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Azimuth spacing in degrees; must divide 360.
    #[arg(long, default_value_t = 10.0)]
    pub az_step: f64,
    /// Elevation band width in degrees; must divide 180.
    #[arg(long, default_value_t = 10.0)]
    pub el_step: f64,
    /// Number of lighting variants per viewpoint (1 to 21).
    #[arg(long, default_value_t = 21)]
    pub lighting: usize,
    /// visible or thermal.
    #[arg(long, default_value_t = Modality::Visible)]
    pub modality: Modality,
    /// Seed of the target's surface texture.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    /// Output directory for the frames and manifest.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Constant elevation in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub elevation: f64,
    /// Azimuth of the first frame in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub start_azimuth: f64,
    /// Azimuth advance per frame in degrees.
    #[arg(long, default_value_t = 0.6, allow_negative_numbers = true)]
    pub rate: f64,
    /// Number of frames.
    #[arg(long, default_value_t = 1174)]
    pub frames: usize,
    /// visible or thermal.
    #[arg(long, default_value_t = Modality::Thermal)]
    pub modality: Modality,
    /// Lighting variant (0 to 20); ignored by thermal renders.
    #[arg(long, default_value_t = 0)]
    pub lighting: usize,
    /// Seed of the target's surface texture.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
}

#[derive(Debug, Subcommand)]
pub enum AugmentCommand {
    /// Contact sheet: each row is one render followed by augmented copies.
    Preview(PreviewArgs),
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Run config supplying the [augment] section; defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of dataset rows, taken evenly spaced through the manifest.
    #[arg(long, default_value_t = 4)]
    pub rows: usize,
    /// Augmented copies per row.
    #[arg(long, default_value_t = 6)]
    pub variants: usize,
    /// Colour channel fed to the pipeline: red, green, blue or gray.
    #[arg(long, default_value = "red")]
    pub channel: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (INI). Omitted sections and keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory: checkpoint.vsp, metrics.csv and config.ini.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// Output JSON report; confusion and bin-distance plots go next to it.
    #[arg(long)]
    pub report: PathBuf,
    /// Free-form tag stored in the report.
    #[arg(long, default_value = "synthetic-visible")]
    pub condition: String,
    /// Side of the square confusion plots in pixels.
    #[arg(long, default_value_t = 360)]
    pub plot_size: usize,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Input PNG at the network's resolution.
    #[arg(long)]
    pub image: PathBuf,
    /// Which logits to explain at the predicted classes: both, azimuth or elevation.
    #[arg(long, default_value = "both")]
    pub head: HeadSelect,
    /// Output overlay PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Place a render of the predicted class centre next to the overlay.
    #[arg(long = "match")]
    pub match_render: bool,
    /// Modality of the --match render.
    #[arg(long, default_value_t = Modality::Visible)]
    pub match_modality: Modality,
    /// Also write the raw map as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Layer to explain; the last residual block by default.
    #[arg(long)]
    pub layer: Option<String>,
    /// Overlay opacity in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
}

fn init_threads(n: usize) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("--threads: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Trajectory(a) => commands::trajectory(&a),
        Command::Augment(AugmentCommand::Preview(a)) => commands::preview(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Explain(a) => commands::explain(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
