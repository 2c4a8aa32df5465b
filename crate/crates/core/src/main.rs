use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = ecolens::cli::Cli::parse();
    match ecolens::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
