//! File formats, reports and the command-line front end for `censet-core`.

pub mod cli;
pub mod commands;
pub mod io;
pub mod oracle;
pub mod policy;
pub mod report;

use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::{Context, Result};

use cli::{Cli, Command};
use report::Render;

/// Outcome of a successful run.
pub enum Outcome {
    Ok,
    /// The oracle command ran but at least one check failed.
    OracleFailed,
}

fn write_report<R: Render>(cli: &Cli, report: &R) -> Result<()> {
    match &cli.global.output {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            report.emit(cli.global.format, &mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            report.emit(cli.global.format, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    policy::install_from_env()?;
    let g = &cli.global;
    match &cli.command {
        Command::Analyze => write_report(cli, &commands::analyze(g)?)?,
        Command::Ksweep(a) => write_report(cli, &commands::ksweep(g, a)?)?,
        Command::Certify => write_report(cli, &commands::certify(g)?)?,
        Command::Reference(a) => write_report(cli, &commands::reference(g, a)?)?,
        Command::Simulate(t) => write_report(cli, &commands::simulate(g, t)?)?,
        Command::Compose(a) => write_report(cli, &commands::compose(g, a)?)?,
        Command::Oracle(a) => {
            let report = oracle::run(g, a)?;
            write_report(cli, &report)?;
            if !report.passed {
                return Ok(Outcome::OracleFailed);
            }
        }
    }
    Ok(Outcome::Ok)
}

/// Machine-readable error record written to stderr.
pub fn error_json(err: &anyhow::Error) -> serde_json::Value {
    serde_json::json!({
        "error": {
            "message": err.to_string(),
            "causes": err.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
        }
    })
}
