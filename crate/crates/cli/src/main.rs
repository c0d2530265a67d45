use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hamflow_cli::{run_file, Overrides, REGISTRY};

#[derive(Debug, Parser)]
#[command(name = "hamflow", version, about = "Run Type II variational numerics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the random seed of the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Override the output path prefix of the config.
    #[arg(long, global = true, value_name = "PREFIX")]
    out: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run { config: PathBuf },
    /// List the registered experiments.
    List,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::List => {
            for e in REGISTRY {
                println!("{:<20} {}", e.name, e.description);
            }
            ExitCode::SUCCESS
        }
        Command::Run { config } => {
            let overrides = Overrides { seed: cli.seed, out: cli.out };
            match run_file(&config, &overrides) {
                Ok(report) => {
                    for f in &report.files {
                        println!("{}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("hamflow: {e}");
                    ExitCode::from(e.exit_code())
                }
            }
        }
    }
}
