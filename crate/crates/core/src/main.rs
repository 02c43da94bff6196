use clap::{Parser, Subcommand};
use mzc::driver::{check_source, run_source, Options, PipelineError, DEFAULT_DEPTH};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mzc", about = "Check and run programs with permissions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Type-check a program.
    Check {
        file: String,
        #[arg(long)]
        dump_perms: bool,
        #[arg(long)]
        dump_facts: bool,
        /// Fold/unfold budget for subsumption.
        #[arg(long, default_value_t = DEFAULT_DEPTH as u64, value_parser = clap::value_parser!(u64).range(1..))]
        depth: u64,
    },
    /// Type-check, then evaluate a program.
    Run {
        file: String,
        /// Skip type checking.
        #[arg(long)]
        unchecked: bool,
    },
}

fn seed() -> u64 {
    std::env::var("MZC_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0)
}

fn fail(file: &str, e: PipelineError) -> ExitCode {
    eprintln!("{}", e.diagnostic(file));
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (file, run) = match &cli.command {
        Command::Check { file, .. } => (file, false),
        Command::Run { file, .. } => (file, true),
    };
    let src = match std::fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{file}: {e}");
            return ExitCode::from(64);
        }
    };
    match cli.command {
        Command::Check { dump_perms, dump_facts, depth, .. } => {
            let opts = Options { depth: depth as usize, seed: seed() };
            match check_source(&src, &opts) {
                Ok((_, report)) => {
                    if dump_facts {
                        print!("{}", report.facts);
                    }
                    if dump_perms {
                        for s in &report.snapshots {
                            print!("{s}");
                        }
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(file, e),
            }
        }
        Command::Run { unchecked, .. } => {
            debug_assert!(run);
            let opts = Options { seed: seed(), ..Options::default() };
            match run_source(&src, &opts, unchecked) {
                Ok(r) => {
                    println!("{}", r.output);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(file, e),
            }
        }
    }
}
