use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use filter_stability::cli::{cmd_analyze, cmd_backward, cmd_divergence, cmd_reproduce_table1, with_threads};
use filter_stability::config::DEFAULT_SEED;
use filter_stability::output::resolve_out_dir;

/// Filter stability for finite-state hidden Markov models.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory [default: $FILTERSTAB_OUT or ./filterstab-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Observability, ergodicity and detectability of a model file.
    Analyze { model: PathBuf },
    /// Monte-Carlo chi-square curves and fitted rates for an experiment file.
    Divergence {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Backward-map estimates and checks for an experiment file.
    Backward {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// The five benchmark rows with fitted rates beside the reported ones.
    ReproduceTable1 {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// 100 paths instead of 500, with widened tolerances.
        #[arg(long)]
        quick: bool,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let out = resolve_out_dir(args.out.as_deref());
    let result = with_threads(args.threads, || match &args.command {
        Command::Analyze { model } => cmd_analyze(model, &out),
        Command::Divergence { config, seed } => cmd_divergence(config, *seed, &out),
        Command::Backward { config, seed } => cmd_backward(config, *seed, &out),
        Command::ReproduceTable1 { seed, quick } => cmd_reproduce_table1(*seed, *quick, &out),
    })
    .and_then(|r| r);
    match result {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            ExitCode::from(outcome.exit_code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
