use std::process::ExitCode;

use clap::Parser;
use dope_cli::app;
use dope_cli::config::{Cli, Command, RunConfig};
use dope_cli::error::CliError;
use dope_core::oracle::{run_all, OracleLimits};

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Serial(args) => {
            let cfg = RunConfig::resolve(&args)?;
            let (run, _) = app::run_serial(&cfg)?;
            println!("serial energy {} ({} foreground)", run.energy, count(&run.labels));
        }
        Command::Dope(args) => {
            let cfg = RunConfig::resolve(&args)?;
            let (run, _) = app::run_dope(&cfg)?;
            let o = &run.outcome;
            println!(
                "dope energy {} ({} foreground), {} iterations, converged {}, {} blocks",
                o.energy,
                count(&o.labels),
                o.state.iter,
                o.converged,
                run.blocks
            );
        }
        Command::Compare(args) => {
            let cfg = RunConfig::resolve(&args)?;
            let (file, _) = app::run_compare(&cfg)?;
            let r = &file.report;
            let gap = r
                .relative_energy_diff
                .map_or("n/a".to_string(), |d| format!("{:.4}%", d * 100.0));
            println!(
                "serial {} dope {} gap {gap} dice {:.4} iterations {} converged {}",
                r.serial_energy, r.dope_energy, r.dice, r.iterations, r.converged
            );
        }
        Command::OracleCheck(args) => {
            let limits = OracleLimits {
                cases: args.cases,
                flow_side: args.flow_side,
                grid_side: args.grid_side,
            };
            let reports = run_all(limits, args.seed)?;
            let mut ok = true;
            for r in &reports {
                println!("{r}");
                ok &= r.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn count(labels: &[u8]) -> usize {
    labels.iter().filter(|&&l| l != 0).count()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
