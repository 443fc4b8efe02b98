use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use corrfield_cli::*;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "corrfield", version, about = "Correspondence-supervised radiance fields on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.iterations=500`. Repeatable;
    /// later values win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (the `output_dir` key).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Synthesis seed (the `seed` key).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results are identical for any value.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene's views and synthesize raw matches.
    Synth(Common),
    /// Merge, propagate and filter the raw matches.
    Preprocess(Common),
    /// Triangulate filtered correspondences into a PLY cloud.
    Triangulate(Common),
    /// Train a field; writes metrics.csv and checkpoint.bin.
    Train(Common),
    /// Render and score the test views from a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; defaults to <output_dir>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep correspondence noise and record survival after filtering.
    AblateNoise(Common),
}

fn config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut overrides = common.overrides.clone();
    if let Some(out) = &common.out {
        overrides.push(format!("output_dir={}", serde_json::Value::String(out.display().to_string())));
    }
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    ExperimentConfig::load(common.config.as_deref(), &overrides)
}

fn print(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn run(command: Command) -> Result<(), CliError> {
    let common = match &command {
        Command::Synth(c)
        | Command::Preprocess(c)
        | Command::Triangulate(c)
        | Command::Train(c)
        | Command::AblateNoise(c) => c,
        Command::Eval { common, .. } => common,
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(CliError::invariant)?;
    }
    let cfg = config(common)?;
    match &command {
        Command::Synth(_) => print(&cmd_synth(&cfg)?),
        Command::Preprocess(_) => print(&cmd_preprocess(&cfg)?),
        Command::Triangulate(_) => print(&cmd_triangulate(&cfg)?),
        Command::Train(_) => print(&cmd_train(&cfg)?),
        Command::Eval { checkpoint, .. } => print(&cmd_eval(&cfg, checkpoint.as_deref())?),
        Command::AblateNoise(_) => print(&cmd_ablate_noise(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let listing = key_listing();
    let command = Cli::command().mut_subcommands(|s| s.after_help(listing.clone()));
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
