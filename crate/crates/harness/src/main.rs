use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sidechain_harness::{run, RunReport, Scenario, Snapshot};

/// Deterministic mainchain and sidechain simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the structured report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write a snapshot for later replay and verification.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Rerun a snapshot's scenario and compare the reports.
    Replay { snapshot: PathBuf },
    /// Re-validate every block and proof stored in a snapshot.
    Verify { snapshot: PathBuf },
    /// Print the report stored in a snapshot.
    Report {
        snapshot: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn print(report: &RunReport, format: Format) {
    match format {
        Format::Text => print!("{}", report.render_text()),
        Format::Structured => println!("{}", report.to_json()),
    }
}

fn verdict(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match command {
        Command::Run {
            scenario,
            seed,
            report,
            snapshot,
            format,
        } => {
            let scenario = Scenario::load(&scenario)?;
            let out = run(&scenario, seed)?;
            if let Some(path) = report {
                std::fs::write(path, out.report.to_json())?;
            }
            if let Some(path) = snapshot {
                out.snapshot.save(&path)?;
            }
            print(&out.report, format);
            Ok(verdict(out.report.passed()))
        }
        Command::Replay { snapshot } => {
            let snap = Snapshot::load(&snapshot)?;
            let outcome = snap.replay()?;
            print!("{}", outcome.report.render_text());
            if outcome.matches {
                println!("replay matches the stored report");
            } else {
                println!(
                    "replay DIFFERS from the stored report (stored {}, replayed {})",
                    snap.report.digest, outcome.report.digest
                );
            }
            Ok(verdict(outcome.matches && outcome.report.passed()))
        }
        Command::Verify { snapshot } => {
            let snap = Snapshot::load(&snapshot)?;
            let v = snap.verify();
            println!("verified {} mainchain and {} sidechain blocks", v.mc_blocks, v.sc_blocks);
            for f in &v.failures {
                println!("FAILED: {f}");
            }
            println!("{}", if v.ok() { "snapshot valid" } else { "snapshot INVALID" });
            Ok(verdict(v.ok()))
        }
        Command::Report { snapshot, format } => {
            let snap = Snapshot::load(&snapshot)?;
            print(&snap.report, format);
            Ok(verdict(snap.report.passed()))
        }
    }
}
