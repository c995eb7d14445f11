//! `tres-diag`: generate → train → attribute → select → report, each stage
//! reading the previous stage's artifacts from disk. Exit codes: 0 success,
//! 2 configuration or input error, 3 numeric failure, 4 filesystem error.

use clap::{Parser, Subcommand};

use tres_cli::commands::{
    cmd_attribute, cmd_generate, cmd_report, cmd_select, cmd_train, AttributeArgs, GenerateArgs,
    ReportArgs, SelectArgs, TrainArgs,
};
use tres_cli::error::CliError;

#[derive(Parser)]
#[command(
    name = "tres-diag",
    about = "Break diagnosis pipeline: synthetic transients, residual CNN, attribution-driven channel selection",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic transient dataset.
    Generate(GenerateArgs),
    /// Train a diagnosis model on a dataset's training split.
    Train(TrainArgs),
    /// Explain a trained model case by case (saliency maps + surrogates).
    Attribute(AttributeArgs),
    /// Rank channels by attributed significance and select the top set.
    Select(SelectArgs),
    /// Compare the full and selected runs on the test split.
    Report(ReportArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Attribute(args) => cmd_attribute(args),
        Command::Select(args) => cmd_select(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
