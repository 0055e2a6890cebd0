//! `gridcast`: operator command line for the nowcasting engine.
//!
//! Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numeric
//! failure (a non-finite value surfaced during computation).

mod cli;
mod commands;
mod config;
mod error;
mod manifest;

use clap::Parser;

use crate::cli::{Cli, Command};
use crate::commands::Ctx;
use crate::error::{CliError, Result};

fn run(cli: Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| CliError::from_io("creating output directory", e))?;
    let ctx = Ctx {
        out_dir: cli.out_dir,
        config_file: cli.config,
        seed: cli.seed,
        verbose: cli.verbose,
        argv: std::env::args().collect(),
    };
    match cli.command {
        Command::Generate(args) => commands::generate(&ctx, args),
        Command::Train(args) => commands::train_cmd(&ctx, args),
        Command::Predict(args) => commands::predict(&ctx, args),
        Command::Evaluate(args) => commands::evaluate_cmd(&ctx, args),
        Command::AblateChannels(args) => commands::ablate_channels(&ctx, args),
        Command::ExportGraph(args) => commands::export_graph(&ctx, args),
    }
}

fn main() {
    // Clap itself exits with code 2 on usage errors (and 0 for --help).
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
