//! `harmap verify` and `harmap list`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harmap::atlas::all_cases;
use harmap::report::{Format, Status, VerificationReport};
use harmap::scenario::{run_scenario, Check, Resolution, Scenario};
use harmap::Error;

const EXIT_FAIL: u8 = 2;
const EXIT_SETUP: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "harmap",
    version,
    about = "Verify identities for harmonic maps of the 2-sphere"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and report per check and case.
    Verify(VerifyArgs),
    /// List the example atlas and the available checks.
    List,
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Restrict to these cases (repeatable).
    #[arg(long = "case", value_name = "NAME")]
    cases: Vec<String>,
    /// Restrict to these checks (repeatable).
    #[arg(long = "check", value_name = "NAME")]
    checks: Vec<String>,
    /// Quadrature resolution, e.g. 32x64.
    #[arg(long, value_name = "NxM")]
    resolution: Option<String>,
    /// Highest pairing order r + s.
    #[arg(long)]
    rmax: Option<usize>,
    /// Write the report here instead of printing a summary only.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json", value_parser = ["json", "csv"])]
    format: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Record wall time per check.
    #[arg(long)]
    timing: bool,
    /// Include per-node residuals in the report.
    #[arg(long)]
    per_node: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::List => {
            list();
            ExitCode::SUCCESS
        }
        Command::Verify(args) => match verify(args) {
            Ok(report) => {
                if report.verdict.status == Status::Pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_FAIL)
                }
            }
            Err(e) => {
                eprintln!("harmap: {e}");
                ExitCode::from(exit_code(&e))
            }
        },
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Scenario(_) | Error::Io(_) => EXIT_USAGE,
        _ => EXIT_SETUP,
    }
}

fn list() {
    println!("cases:");
    for case in all_cases() {
        println!("  {:<20} {}", case.name, case.description);
        for f in &case.families {
            println!("  {:<20}   family {} ({:?})", "", f.name, f.tag);
        }
    }
    println!("checks:");
    for c in Check::ALL {
        println!("  {:<20} {}", c.name(), c.describe());
    }
}

fn verify(args: VerifyArgs) -> harmap::Result<VerificationReport> {
    let mut s = Scenario::load(&args.scenario)?;
    if !args.cases.is_empty() {
        s.cases = args.cases;
    }
    if !args.checks.is_empty() {
        s.checks = args.checks;
    }
    if let Some(r) = args.resolution {
        s.resolution = r.parse::<Resolution>()?;
    }
    if let Some(k) = args.rmax {
        s.rmax = k;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    s.timing |= args.timing;
    s.per_node |= args.per_node;
    let format: Format = args.format.parse()?;
    let report = run_scenario(&s)?;
    for r in &report.results {
        let margin = r.margin.map(|m| format!("{m:+.2}")).unwrap_or_else(|| "-".into());
        let worst = r.max_residual.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<20} {:<20} {:<18} margin {:>7}  worst {}",
            r.check,
            r.case,
            r.status.as_str(),
            margin,
            worst
        );
    }
    let v = &report.verdict;
    println!(
        "verdict: {} ({} passed, {} failed, {} skipped, {} not applicable)",
        v.status.as_str(),
        v.passed,
        v.failed,
        v.skipped,
        v.not_applicable
    );
    if let Some(path) = args.out {
        report.emit(format, &path)?;
    }
    Ok(report)
}
