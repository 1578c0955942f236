//! `dehaze` — synthesize hazy data, train, fine-tune, dehaze and evaluate.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status for bad usage or configuration.
const EXIT_USAGE: u8 = 1;
/// Exit status for unreadable, missing or ill-sized data and checkpoints.
const EXIT_DATA: u8 = 2;
/// Exit status for numerical failures (non-finite values).
const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "dehaze", version, about = "Conditional-GAN single-image dehazing")]
struct Cli {
    /// More log output (repeat for trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the default run configuration as TOML.
    Config,
    /// Render hazy images from clear ones and write a pair manifest.
    Synthesize(SynthesizeArgs),
    /// Pair the images of a haze directory and a clear directory.
    Manifest(ManifestArgs),
    /// Train from scratch (or resume) following a run configuration.
    Train(TrainArgs),
    /// Input-size-flexibility fine-tuning starting from a checkpoint.
    Finetune(FinetuneArgs),
    /// Dehaze an image or every image in a directory at native resolution.
    Dehaze(DehazeArgs),
    /// Score a checkpoint (or a directory of checkpoints) on a pair manifest.
    Evaluate(EvaluateArgs),
    /// Write the learned haze map of an image as an 8-bit picture.
    Hazemap(HazemapArgs),
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    /// Directory of clear images.
    #[arg(long)]
    clear: PathBuf,
    /// Output directory (receives haze/, clear/, manifest.tsv, params.tsv).
    #[arg(long)]
    out: PathBuf,
    /// Run configuration supplying the `[synthesize]` section.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Atmospheric light range, overrides the configuration.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    alpha: Option<Vec<f64>>,
    /// Scattering coefficient range, overrides the configuration.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    beta: Option<Vec<f64>>,
    /// Constant part of the synthetic depth.
    #[arg(long)]
    depth_base: Option<f64>,
    /// Extra depth at the top row of the synthetic depth ramp.
    #[arg(long)]
    depth_ramp: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    /// Identical file stems.
    Stem,
    /// Haze stems `<clear stem>_<suffix>`; one haze image drawn per clear image.
    ClearId,
}

#[derive(Debug, Args)]
struct ManifestArgs {
    #[arg(long)]
    haze: PathBuf,
    #[arg(long)]
    clear: PathBuf,
    /// Manifest file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = RuleArg::Stem)]
    rule: RuleArg,
    /// Seed for the clear-id rule.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Continue from a checkpoint written by an earlier run of this config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many steps (a resumable checkpoint is written).
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[arg(long)]
    config: PathBuf,
    /// Pretrained checkpoint for the same model configuration.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Debug, Args)]
struct DehazeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image file or directory of images.
    #[arg(long)]
    input: PathBuf,
    /// Output directory; results are written as `<stem>.png`.
    #[arg(long)]
    out: PathBuf,
    /// Seed of the test-time dropout noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Checkpoint file, or a directory of `.ckpt` files to compare over training.
    #[arg(long, required_unless_present = "identity")]
    checkpoint: Option<PathBuf>,
    /// Score the hazy inputs themselves (no-op baseline).
    #[arg(long, conflicts_with = "checkpoint")]
    identity: bool,
    /// Pair manifest to score on.
    #[arg(long)]
    manifest: PathBuf,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct HazemapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Output image; the map is clamped to [-1, 1] and written on the byte scale.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("DEHAZE_LOG")
        .format_timestamp(None)
        .init();
}

/// Maps an error chain to the documented exit statuses.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dehaze_core::Error>() {
            if e.is_numeric_error() {
                return EXIT_NUMERIC;
            }
            if e.is_data_error() {
                return EXIT_DATA;
            }
        }
        if let Some(e) = cause.downcast_ref::<commands::Failures>() {
            return if e.numeric { EXIT_NUMERIC } else { EXIT_DATA };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(&cli);
    let result = match cli.command {
        Command::Config => commands::print_config(),
        Command::Synthesize(a) => commands::synthesize(a),
        Command::Manifest(a) => commands::manifest(a),
        Command::Train(a) => commands::train(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Dehaze(a) => commands::dehaze(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Hazemap(a) => commands::hazemap(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
