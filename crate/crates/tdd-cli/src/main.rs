use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tdd_cli::{run_scenario, Command, RunOptions};

/// Run a hidden-string scenario and write CSV artifacts plus summary.txt.
#[derive(Debug, Parser)]
#[command(name = "tdd", version)]
struct Args {
    /// scenario file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// artifact directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// pdc-check | coupling | simulate | compare | brillouin | maxwell1d
    #[arg(long)]
    command: Option<String>,
    /// worker threads; artifacts do not depend on this
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command.as_deref().map(str::parse::<Command>).transpose() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let opts = RunOptions { out: args.out, command, threads: args.threads };
    match run_scenario(&args.config, &opts) {
        Ok(summary) => {
            print!("{}", summary.render());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
