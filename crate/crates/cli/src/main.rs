mod args;
mod grid;
mod kbc;
mod manifest;
mod qa;
mod util;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, QaCommand};
use util::UsageError;

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => kbc::cmd_train(args),
        Command::Eval(args) => kbc::cmd_eval(args),
        Command::Qa(QaCommand::Train(args)) => qa::cmd_train(args),
        Command::Qa(QaCommand::Answer(args)) => qa::cmd_answer(args),
        Command::Qa(QaCommand::Eval(args)) => qa::cmd_eval(args),
        Command::Grid(args) => grid::cmd_grid(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            // --help and --version are not errors.
            return if err.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if err.is::<UsageError>() => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
