use std::process::ExitCode;

use censet::cli::Cli;
use censet::{error_json, run, Outcome};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::OracleFailed) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": {"message": "one or more oracle checks failed", "causes": []}})
            );
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
