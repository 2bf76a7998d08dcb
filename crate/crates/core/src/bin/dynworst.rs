use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dynworst::cli::{self, RunOptions};

#[derive(Parser)]
#[command(name = "dynworst", version, about = "Worst-case portfolios for dynamic monetary utilities on finite trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tasks of a scenario file
    Run {
        file: PathBuf,
        /// Run only this task
        #[arg(long)]
        only: Option<String>,
        /// Write one <task>.tsv per task into this directory instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Override every task seed
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let Command::Run { file, only, out, workers, seed } = Cli::parse().command;
    let code = cli::run(&file, out.as_deref(), &RunOptions { only, workers, seed });
    ExitCode::from(code as u8)
}
