use std::process::ExitCode;

use clap::Parser;
use pfe_cli::{init_threads, run, Cli};

fn main() -> ExitCode {
    // clap exits with 2 on usage errors and 0 for --help/--version
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
