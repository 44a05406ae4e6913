use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cohort_policy_cli::Cli::parse();
    match cohort_policy_cli::run(cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
