//! `tactile3d`: dataset generation, estimator training, reconstruction and
//! evaluation for the synthetic tactile sensor.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tactile_core::estimation::ChannelMode;

pub use config::PipelineConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tactile3d", version, about = "Synthetic RGB-NIR tactile sensor: calibration, reconstruction, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Rgb,
    Rgbnir,
}

impl From<ModeArg> for ChannelMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Rgb => ChannelMode::RgbOnly,
            ModeArg::Rgbnir => ChannelMode::RgbNir,
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub channel_mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub prior: Option<config::PriorMode>,
    /// Output root; overrides `paths.out`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct DatasetArg {
    /// Dataset directory (default: `<out>/dataset`).
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a calibration dataset into `<out>/dataset`.
    GenDataset {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a PSNN on the training split.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dataset: DatasetArg,
    },
    /// Build the lookup-table baseline from the training split.
    BuildLut {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dataset: DatasetArg,
    },
    /// Estimate normals for one frame and integrate them to depth.
    Reconstruct {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dataset: DatasetArg,
        /// PSNN checkpoint or LUT file.
        #[arg(long, value_name = "PATH")]
        estimator: PathBuf,
        /// Dataset sample index.
        #[arg(long, conflicts_with = "frame", required_unless_present = "frame")]
        sample: Option<usize>,
        /// TRAS raster whose first six channels are R, G, B, NIR1-3.
        #[arg(long, value_name = "PATH")]
        frame: Option<PathBuf>,
    },
    /// Gradient and depth errors of one or more estimators on the test split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(long = "estimator", value_name = "PATH", required = true)]
        estimators: Vec<PathBuf>,
    },
    /// Convert a depth raster (mm) to an ASCII PLY point cloud.
    ExportPly {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Inspection images of one dataset sample.
    Plot {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(long)]
        sample: usize,
    },
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::GenDataset { common }
            | Command::Train { common, .. }
            | Command::BuildLut { common, .. }
            | Command::Reconstruct { common, .. }
            | Command::Eval { common, .. }
            | Command::ExportPly { common, .. }
            | Command::Plot { common, .. } => common,
        }
    }
}

/// Runs one parsed command; progress lines go to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = commands::Context::new(cli.command.common())?;
    match cli.command {
        Command::GenDataset { .. } => commands::gen_dataset(&ctx),
        Command::Train { dataset, .. } => commands::train(&ctx, dataset.dataset),
        Command::BuildLut { dataset, .. } => commands::build_lut(&ctx, dataset.dataset),
        Command::Reconstruct { dataset, estimator, sample, frame, .. } => {
            let source = match (sample, frame) {
                (Some(i), _) => commands::FrameSource::Sample { dataset: dataset.dataset, index: i },
                (None, Some(p)) => commands::FrameSource::File(p),
                (None, None) => return Err(CliError::config("reconstruct needs --sample or --frame")),
            };
            commands::reconstruct(&ctx, &estimator, source)
        }
        Command::Eval { dataset, estimators, .. } => commands::eval(&ctx, dataset.dataset, &estimators),
        Command::ExportPly { input, .. } => commands::export_ply(&ctx, &input),
        Command::Plot { dataset, sample, .. } => commands::plot(&ctx, dataset.dataset, sample),
    }
}
