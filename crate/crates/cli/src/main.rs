mod commands;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use ppc_core::models::{ModelKind, ModelSpec};
use ppc_core::training::{ExperimentConfig, InputMode, Method, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "ppc", version, about = "Place categorization from panoramic LiDAR scans")]
struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Project point-cloud CSV files to depth and reflectance panoramas.
    Convert(ConvertArgs),
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Train on one fold of a grouped k-fold plan and test on its held-out sets.
    Train(TrainArgs),
    /// Grouped k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Evaluate trained networks on a dataset.
    Eval(EvalArgs),
    /// Class-averaged Grad-CAM maps of a single-stream model.
    Gradcam(GradcamArgs),
    /// Accuracy under horizontal rotation of the input scans.
    Rotsweep(RotsweepArgs),
}

#[derive(Args, Debug)]
struct ConvertArgs {
    /// Point-cloud CSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output directory for PANO files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 384)]
    width: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    per_category: usize,
    /// Number of location sets.
    #[arg(long, default_value_t = 5)]
    sets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 384)]
    width: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    /// Also write the raw point clouds as CSV.
    #[arg(long)]
    clouds: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Arch {
    Vgg,
    VggRwmp,
    VggHcc,
    VggRwmpHcc,
}

impl Arch {
    fn flags(self) -> (bool, bool) {
        match self {
            Arch::Vgg => (false, false),
            Arch::VggRwmp => (false, true),
            Arch::VggHcc => (true, false),
            Arch::VggRwmpHcc => (true, true),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Modality {
    Depth,
    Reflectance,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Fusion {
    Avg,
    Adaptive,
    Early,
    Late,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset directory with index.csv.
    #[arg(long, env = "PPC_DATA_DIR")]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Arch::VggRwmpHcc)]
    model: Arch,
    #[arg(long, value_enum, default_value_t = Modality::Depth)]
    modality: Modality,
    /// How the two modalities are combined; requires --modality both.
    #[arg(long, value_enum)]
    fusion: Option<Fusion>,
    /// Divide every layer width by this (1, 2, 4, ... 64).
    #[arg(long, default_value_t = 1)]
    divisor: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Disable random flips and circular shifts.
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 1e-3)]
    gating_lr: f64,
    #[arg(long, default_value_t = 128)]
    gating_hidden: usize,
}

impl ModelArgs {
    fn method(&self) -> Result<Method, String> {
        let single = |mode| Method::Single { mode, kind: ModelKind::Single };
        match (self.modality, self.fusion) {
            (Modality::Depth, None) => Ok(single(InputMode::Depth)),
            (Modality::Reflectance, None) => Ok(single(InputMode::Reflectance)),
            (Modality::Both, Some(Fusion::Early)) => Ok(single(InputMode::Both)),
            (Modality::Both, Some(Fusion::Late)) => Ok(Method::Single { mode: InputMode::Both, kind: ModelKind::Late }),
            (Modality::Both, Some(Fusion::Avg)) => Ok(Method::SoftmaxAverage),
            (Modality::Both, Some(Fusion::Adaptive)) => Ok(Method::Adaptive),
            (Modality::Both, None) => Err("--modality both needs --fusion avg|adaptive|early|late".into()),
            (m, Some(_)) => Err(format!("--fusion combines two modalities and cannot be used with --modality {m:?}").to_lowercase()),
        }
    }

    /// The experiment these flags describe; the error is a usage message.
    fn experiment(&self, height: usize, width: usize) -> Result<ExperimentConfig, String> {
        let (hcc, rwmp) = self.model.flags();
        let spec = ModelSpec::new(1, hcc, rwmp)
            .with_divisor(self.divisor)
            .with_input_size(height, width);
        spec.validate().map_err(|e| e.to_string())?;
        let mut cfg = ExperimentConfig::new(spec, self.method()?);
        cfg.train = TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            patience: self.patience,
            max_epochs: self.epochs,
            seed: self.seed,
        };
        cfg.augment.rng_seed = self.seed;
        if self.no_augment {
            cfg.augment.enable_flip = false;
            cfg.augment.enable_shift = false;
        }
        cfg.gating.lr = self.gating_lr;
        cfg.gating.max_epochs = self.epochs;
        cfg.gating.patience = self.patience;
        cfg.gating_hidden = self.gating_hidden;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct FoldArgs {
    /// Number of folds in the grouped plan.
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    plan: FoldArgs,
    /// Fold whose test sets are held out.
    #[arg(long, default_value_t = 0)]
    fold: usize,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    plan: FoldArgs,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Save each fold's networks under fold_<i>/.
    #[arg(long)]
    save_models: bool,
}

#[derive(Args, Debug)]
struct EvalTarget {
    #[command(flatten)]
    data: DataArgs,
    /// Directory written by `train`.
    #[arg(long)]
    model_dir: PathBuf,
    /// Only use the test scans of this fold (with --folds).
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    target: EvalTarget,
}

#[derive(Args, Debug)]
struct GradcamArgs {
    #[command(flatten)]
    target: EvalTarget,
}

#[derive(Args, Debug)]
struct RotsweepArgs {
    #[command(flatten)]
    target: EvalTarget,
    /// Angle step in degrees.
    #[arg(long, default_value_t = 30.0)]
    step: f64,
}

/// Exit code for inputs that hold no points.
const EXIT_NO_POINTS: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Convert(a) => commands::convert(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Crossval(a) => commands::crossval(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcam(a) => commands::gradcam(a),
        Command::Rotsweep(a) => commands::rotsweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(commands::Usage(msg)) = e.downcast_ref() {
                Cli::command()
                    .error(clap::error::ErrorKind::ArgumentConflict, msg)
                    .exit();
            }
            eprintln!("error: {e:#}");
            let empty = e
                .chain()
                .any(|c| matches!(c.downcast_ref(), Some(ppc_core::Error::EmptyCloud)));
            ExitCode::from(if empty { EXIT_NO_POINTS } else { 1 })
        }
    }
}
