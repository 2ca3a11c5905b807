//! `mcta`: synthetic data, feature extraction, augmentation, training,
//! ablation and diagnostics for the attention CNN.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcta_core::config::Settings;
use mcta_core::Error;

/// Exit status for runtime and IO failures.
const EXIT_RUNTIME: u8 = 1;
/// Exit status for invalid input or configuration.
const EXIT_VALIDATION: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "mcta", version, about = "Multi-channel temporal attention for sound event classification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Settings file of `key = value` lines, applied over the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Single setting applied after the config file, e.g. `train.epochs=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for feature extraction and independent runs.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the seeded synthetic dataset (WAVs plus manifest).
    Synth(commands::SynthArgs),
    /// Extract and cache log-mel/delta features for every manifest row.
    Features(commands::FeaturesArgs),
    /// Add delay, pitch and noise variants of each original clip.
    Augment(commands::AugmentArgs),
    /// Cross-validate one attention mode; writes a JSON run report.
    Train(commands::TrainArgs),
    /// Cross-validate several attention modes with shared seeds.
    Ablate(commands::AblateArgs),
    /// Write sampled per-channel attention weights of a checkpoint as CSV.
    AttentionDump(commands::DumpArgs),
    /// Finite-difference gradient checks of the differentiable ops.
    Gradcheck(commands::GradcheckArgs),
    /// Parameter count and per-layer table of the configured model.
    Params(commands::ParamsArgs),
}

impl Global {
    /// Defaults, then the config file, then `--set` flags.
    fn settings(&self) -> anyhow::Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("--set expects KEY=VALUE, got {o:?}")))?;
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }
}

fn init_logging(g: &Global) {
    let level = if g.quiet {
        log::LevelFilter::Error
    } else {
        match g.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(Error::Validation("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let settings = || cli.global.settings();
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Features(a) => commands::features(a, settings()?),
        Command::Augment(a) => commands::augment(a, settings()?),
        Command::Train(a) => commands::train(a, settings()?),
        Command::Ablate(a) => commands::ablate(a, settings()?),
        Command::AttentionDump(a) => commands::attention_dump(a, settings()?),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Params(a) => commands::params(a, settings()?),
    }
}

/// Validation problems anywhere in the chain map to exit 2, everything
/// else to 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .any(|e| e.downcast_ref::<Error>().is_some_and(Error::is_validation));
    if validation {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.global);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
