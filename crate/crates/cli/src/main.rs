use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rbridge_cli::{Inputs, RunContext};
use rbridge_core::store::load_config;
use rbridge_core::Result;

#[derive(Parser)]
#[command(
    name = "rbridge",
    version,
    about = "Weighted-NLL proxy metrics and proxy-to-target prediction"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Override a config value, e.g. `--set k=3 --set proxy.max_inflight=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate frontier reasoning traces for every benchmark.
    Trace(Common),
    /// Score benchmarks under every proxy checkpoint.
    Score(Common),
    /// Fit proxy scores against target scores with k-fold cross-validation.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Proxy scores (default: <out>/scores.jsonl).
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Target scores (default: config target_scores).
        #[arg(long)]
        targets: Option<PathBuf>,
    },
    /// Rank datasets by proxy scores and compare with the target ranking.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        targets: Option<PathBuf>,
    },
    /// Apply fitted curves to proxy scores from new pre-training datasets.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Proxy scores on the new datasets (default: config transfer.new_scores).
        #[arg(long)]
        new_scores: Option<PathBuf>,
        /// Ground-truth target scores on the new datasets.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Target scores of the training datasets, for rank checks.
        #[arg(long)]
        targets: Option<PathBuf>,
    },
    /// Write CSV bundles for plotting from a run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn context(common: &Common, inputs: Inputs) -> Result<RunContext> {
    let config = load_config(&common.config, &common.overrides)?;
    Ok(RunContext::new(config, &common.out, rbridge_cli::timestamp_from_env()?)?.with_inputs(inputs))
}

fn run(command: Command) -> Result<String> {
    let mut out = String::new();
    match command {
        Command::Trace(common) => writeln!(
            out,
            "{}",
            rbridge_cli::cmd_trace(&context(&common, Inputs::default())?)?
        )
        .unwrap(),
        Command::Score(common) => {
            let records = rbridge_cli::cmd_score(&context(&common, Inputs::default())?)?;
            for r in &records {
                writeln!(
                    out,
                    "{}\t{}@{}\t{}\t{}",
                    r.benchmark, r.dataset, r.checkpoint_tokens, r.metric, r.value
                )
                .unwrap();
            }
        }
        Command::Fit {
            common,
            scores,
            targets,
        } => {
            let inputs = Inputs {
                scores,
                targets,
                ..Inputs::default()
            };
            write!(out, "{}", rbridge_cli::cmd_fit(&context(&common, inputs)?)?).unwrap();
        }
        Command::Rank {
            common,
            scores,
            targets,
        } => {
            let inputs = Inputs {
                scores,
                targets,
                ..Inputs::default()
            };
            write!(out, "{}", rbridge_cli::cmd_rank(&context(&common, inputs)?)?).unwrap();
        }
        Command::Transfer {
            common,
            new_scores,
            truth,
            targets,
        } => {
            let inputs = Inputs {
                targets,
                new_scores,
                truth,
                ..Inputs::default()
            };
            write!(out, "{}", rbridge_cli::cmd_transfer(&context(&common, inputs)?)?).unwrap();
        }
        Command::Report { out: dir } => {
            for rel in rbridge_cli::cmd_report(&dir)? {
                writeln!(out, "{}", dir.join(rel).display()).unwrap();
            }
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(text) => {
            // a closed pipe (e.g. `| head`) is not a failure; artifacts are already written
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    eprintln!("error: writing to stdout: {e}");
                    ExitCode::FAILURE
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
