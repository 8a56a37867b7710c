use std::io::Write;
use std::process::ExitCode;

use chdg_cli::commands::{cmd_check, cmd_convergence, cmd_genmesh, cmd_run, format_convergence_table, threads_from_env};
use chdg_cli::config::{CheckConfig, ConvergenceSettings, RunConfig};
use chdg_cli::CliError;

const USAGE: &str = "\
usage: ch <command> <argument>

commands:
  run <config>                  integrate and write energy.csv and snapshots
  convergence <config>          run a manufactured-solution convergence study
  check <config>                run the invariant suite on the configured mesh
  genmesh <spec> [out.chmesh]   write a generated mesh

environment:
  CH_THREADS                    worker cap for convergence studies (default 1)";

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let one = |what: &str| -> Result<&String, CliError> {
        match &args[1..] {
            [path] => Ok(path),
            _ => Err(CliError::usage(format!("`{what}` takes one configuration file\n\n{USAGE}"))),
        }
    };
    match args.first().map(String::as_str) {
        Some("run") => {
            let summary = cmd_run(&RunConfig::read(one("run")?)?)?;
            writeln!(out, "{summary}")?;
        }
        Some("convergence") => {
            let settings = ConvergenceSettings::read(one("convergence")?)?;
            let (rows, path) = cmd_convergence(&settings, threads_from_env()?)?;
            write!(out, "{}", format_convergence_table(&rows))?;
            writeln!(out, "table written to {}", path.display())?;
        }
        Some("check") => {
            let cfg = CheckConfig::read(one("check")?)?;
            cmd_check(&cfg, &mut out)?;
        }
        Some("genmesh") => cmd_genmesh(&args[1..], &mut out)?,
        Some("-h" | "--help" | "help") => writeln!(out, "{USAGE}")?,
        Some(other) => return Err(CliError::usage(format!("unknown command `{other}`\n\n{USAGE}"))),
        None => return Err(CliError::usage(USAGE)),
    }
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ch: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
