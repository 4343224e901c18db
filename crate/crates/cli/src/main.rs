//! `attrex` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "attrex", version, about = "Attribution maps, explanation metrics and metric reliability for small CNNs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Keys of a `--config` JSON file override
/// flags of the same (snake_case) name.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Global {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output file or directory of the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON file whose keys override command-line flags.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset directory.
    GenData(commands::GenData),
    /// Train a TinyCNN on a dataset.
    Train(commands::Train),
    /// Compute attribution maps into an archive directory.
    Explain(commands::Explain),
    /// Score attribution maps with the explanation metrics (CSV).
    Evaluate(commands::Evaluate),
    /// Meta-evaluate the metrics under minor and disruptive perturbations.
    Meta(commands::Meta),
    /// Build tables and charts from metric and meta-evaluation results.
    Report(commands::Report),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ATTREX_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = commands::load_config(cli.global.config.as_deref())?;
    let global: Global = commands::overlay(&cli.global, &config)?;
    let mut known = commands::keys(&global)?;
    if let Some(w) = global.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| CliError::Failed(e.to_string()))?;
    }
    macro_rules! dispatch {
        ($args:expr, $f:path) => {{
            let args = commands::overlay(&$args, &config)?;
            known.extend(commands::keys(&args)?);
            commands::reject_unknown(&config, &known)?;
            $f(&global, &args)
        }};
    }
    match cli.command {
        Command::GenData(a) => dispatch!(a, commands::gen_data),
        Command::Train(a) => dispatch!(a, commands::train),
        Command::Explain(a) => dispatch!(a, commands::explain),
        Command::Evaluate(a) => dispatch!(a, commands::evaluate),
        Command::Meta(a) => dispatch!(a, commands::meta),
        Command::Report(a) => dispatch!(a, commands::report),
    }
}
