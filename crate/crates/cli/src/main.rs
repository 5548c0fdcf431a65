//! `divseg`: synthesise data, train networks, predict with single models or
//! ensembles, and evaluate predicted masks.
//!
//! Exit codes: 0 success, 1 user error (bad flags, missing or unreadable
//! inputs, invalid configuration), 2 internal error.

mod commands;

use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

const AFTER_HELP: &str = "\
Flags given on the command line override the same keys in --config files.
DIVSEG_OUT sets the default output root (default: ./runs).";

#[derive(Debug, Parser)]
#[command(name = "divseg", version, about = "Polyp segmentation: TriUNet, network ensembles, single-channel Dice", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic polyp-like dataset with exact masks.
    Synth(SynthArgs),
    /// Train one network and keep per-epoch checkpoints plus `best`.
    Train(TrainArgs),
    /// Predict masks with one checkpoint.
    Predict(PredictArgs),
    /// Predict masks by fusing several checkpoints.
    EnsemblePredict(EnsembleArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
#[command(after_help = AFTER_HELP)]
struct SynthArgs {
    /// TOML file with generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $DIVSEG_OUT/synth].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Image side length in pixels.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    negative_fraction: Option<f64>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Arch {
    Unet,
    Unetpp,
    Fpn,
    Deeplabv3,
    Deeplabv3plus,
    Triunet,
}

impl Arch {
    fn id(self) -> &'static str {
        match self {
            Arch::Unet => "unet",
            Arch::Unetpp => "unetpp",
            Arch::Fpn => "fpn",
            Arch::Deeplabv3 => "deeplabv3",
            Arch::Deeplabv3plus => "deeplabv3plus",
            Arch::Triunet => "triunet",
        }
    }
}

#[derive(Debug, Args)]
#[command(after_help = AFTER_HELP)]
struct TrainArgs {
    /// Network to train [default: config `arch`, else unet].
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    /// Dataset manifest (`split<TAB>image<TAB>mask-or-dash` lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Flat TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $DIVSEG_OUT/<arch>].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    working_size: Option<usize>,
    #[arg(long)]
    base_width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Augmentation entry such as "horizontal_flip p=0.5"; repeatable.
    #[arg(long)]
    augment: Vec<String>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Checkpoint directory (e.g. a training run's `best`).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image file or directory of images.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for masks [default: $DIVSEG_OUT/predict].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Network input size [default: the checkpoint's training size].
    #[arg(long)]
    working_size: Option<usize>,
    /// Also write images with the predicted mask blended in, under `overlay/`.
    #[arg(long)]
    overlay: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Soft,
    Hard,
}

#[derive(Debug, Args)]
#[command(after_help = AFTER_HELP)]
struct EnsembleArgs {
    /// Comma-separated checkpoint directories.
    #[arg(long, value_delimiter = ',', required_unless_present = "manifest")]
    members: Vec<PathBuf>,
    /// Ensemble manifest (TOML); --members and --mode override it.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Fusion of member outputs [default: soft].
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Image file or directory of images.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for masks [default: $DIVSEG_OUT/ensemble].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Network input size [default: manifest, else the members' training size].
    #[arg(long)]
    working_size: Option<usize>,
    #[arg(long)]
    overlay: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory of predicted masks.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth masks, matched by file stem.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// JSON report path; a per-image CSV is written next to it.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    panic::set_hook(Box::new(|info| eprintln!("internal error: {info}")));
    match panic::catch_unwind(|| commands::run(cli.command)) {
        Ok(Ok(summary)) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
        Err(_) => ExitCode::from(2),
    }
}
