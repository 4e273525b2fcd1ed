use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sotlab_cli::{list_experiments, run_file, RunOptions};

#[derive(Parser)]
#[command(name = "sotlab", version, about = "Run optimal-transport control experiments from TOML configs")]
#[command(after_help = experiments_help())]
struct Cli {
    /// Print the experiment table and exit.
    #[arg(long)]
    list: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output file; overrides `output` in the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long, env = "SOTLAB_THREADS")]
        threads: Option<usize>,
        /// Base seed; overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the experiment table.
    List,
}

fn experiments_help() -> String {
    format!("Experiments:\n{}", list_experiments())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Some(Command::Run {
            config,
            output,
            threads,
            seed,
        }) => {
            let opts = RunOptions { output, threads, seed };
            match run_file(&config, &opts) {
                Ok(outcome) => {
                    println!("{}", outcome.summary);
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Some(Command::List) => {
            print!("{}", list_experiments());
            ExitCode::SUCCESS
        }
        None if cli.list => {
            print!("{}", list_experiments());
            ExitCode::SUCCESS
        }
        None => {
            eprintln!("{}", experiments_help());
            eprintln!("usage: sotlab run <config> | sotlab list");
            ExitCode::from(1)
        }
    }
}
