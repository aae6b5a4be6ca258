//! `osp`: command-line front end for the osp-core algorithms.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cmd;
mod error;
mod io;

use io::Format;

#[derive(Parser)]
#[command(name = "osp", version, about = "Video codec, attention, bucketing, gradient-guard and curation tools")]
#[command(arg_required_else_help = true, propagate_version = true)]
struct Cli {
    /// RNG seed for commands that generate data; OSP_SEED takes precedence when set.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output layout for list-valued results.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Haar wavelet decomposition and reconstruction.
    #[command(subcommand)]
    Wavelet(cmd::wavelet::WaveletCmd),
    /// Streaming causal convolution with a frame cache.
    #[command(subcommand)]
    Stream(cmd::stream::StreamCmd),
    /// Skiparse index plans, attention-distance analysis and RoPE checks.
    #[command(subcommand)]
    Skiparse(cmd::skiparse::SkiparseCmd),
    /// Min-Max Token bucket planning and batching.
    #[command(subcommand)]
    Bucket(cmd::bucket::BucketCmd),
    /// Adaptive gradient clipping simulation.
    #[command(subcommand)]
    Gradguard(cmd::guard::GuardCmd),
    /// Clip curation statistics.
    Curate(cmd::curate::CurateCmd),
}

/// Shared settings resolved from global flags and the environment.
pub struct Ctx {
    pub seed: u64,
    pub format: Option<Format>,
}

fn resolve_seed(flag: u64) -> Result<u64, String> {
    match std::env::var("OSP_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| format!("OSP_SEED={v:?} is not an unsigned integer")),
        Err(_) => Ok(flag),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("OSP_LOG").init();

    let seed = match resolve_seed(cli.seed) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let ctx = Ctx {
        seed,
        format: cli.format,
    };
    let result = match cli.command {
        Command::Wavelet(c) => cmd::wavelet::run(c, &ctx),
        Command::Stream(c) => cmd::stream::run(c, &ctx),
        Command::Skiparse(c) => cmd::skiparse::run(c, &ctx),
        Command::Bucket(c) => cmd::bucket::run(c, &ctx),
        Command::Gradguard(c) => cmd::guard::run(c, &ctx),
        Command::Curate(c) => cmd::curate::run(c, &ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_broken_pipe() => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error::error_json(&e));
            ExitCode::from(1)
        }
    }
}
