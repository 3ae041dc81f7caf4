// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aw_core::harness::artifacts::verify_artifacts;
use aw_core::harness::config::RunConfig;
use aw_core::harness::explorer::{explore_states, ExploreOptions};
use aw_core::harness::extraction::oracle_extraction_demo_seeded;
use aw_core::harness::run::{run_audit, RunError};
use aw_core::harness::scenario::{run_scenario, ScenarioName, ScenarioSpec};
use aw_core::harness::Outcome;
use aw_core::par;

const EXIT_ABORT: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const EXIT_USAGE: u8 = 4;

/// Attested audit sessions: run, attack, explore and verify.
#[derive(Parser)]
#[command(name = "aw", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one audit session described by a key=value config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one adversary scenario and compare against its expected outcome.
    Scenario {
        name: ScenarioName,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Explore protocol interleavings up to a depth bound.
    Explore {
        #[arg(long, default_value_t = 12)]
        depth: u32,
        /// Disable integrity checks; exploration must then find violations.
        #[arg(long)]
        self_test: bool,
        #[arg(long)]
        honest_only: bool,
        #[arg(long)]
        sequential: bool,
    },
    /// Check an artifact directory offline.
    Verify {
        dir: PathBuf,
        #[arg(long)]
        prover_key: Option<PathBuf>,
    },
    /// Bit-by-bit secret extraction against the question budget.
    Extract {
        #[arg(long)]
        bits: u32,
        #[arg(long)]
        kmax: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn outcome_code(o: &Outcome) -> ExitCode {
    match o {
        Outcome::Completed => ExitCode::SUCCESS,
        _ => ExitCode::from(EXIT_ABORT),
    }
}

fn run(config: PathBuf) -> ExitCode {
    let text = match std::fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("aw: {}: {e}", config.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cfg: RunConfig = match text.parse() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("aw: {}: {e}", config.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run_audit(&cfg) {
        Ok(summary) => {
            print!("{}", summary.report_text);
            println!("artifacts {}", cfg.output.display());
            outcome_code(&summary.outcome)
        }
        Err(e @ RunError::Startup(_)) => {
            eprintln!("aw: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("aw: {e}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run { config } => run(config),
        Command::Scenario { name, seed } => {
            let report = run_scenario(&ScenarioSpec::new(name, seed));
            print!("{}", report.to_text());
            if report.pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFY)
            }
        }
        Command::Explore {
            depth,
            self_test,
            honest_only,
            sequential,
        } => {
            let mut opts = if self_test {
                ExploreOptions::self_test()
            } else {
                ExploreOptions::default()
            };
            opts.honest_only = honest_only;
            if sequential {
                opts.mode = par::Mode::Sequential;
            }
            let report = explore_states(depth, &opts);
            print!("{}", report.to_text());
            let ok = if self_test {
                !report.violations.is_empty()
            } else {
                report.violations.is_empty()
            };
            if self_test {
                println!("self-test {}", if ok { "caught violations" } else { "found nothing" });
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFY)
            }
        }
        Command::Verify { dir, prover_key } => {
            if !dir.is_dir() {
                eprintln!("aw: {}: not a directory", dir.display());
                return ExitCode::from(EXIT_USAGE);
            }
            let report = verify_artifacts(&dir, prover_key.as_deref());
            print!("{}", report.to_text());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFY)
            }
        }
        Command::Extract { bits, kmax, seed } => {
            let demo = oracle_extraction_demo_seeded(bits, kmax, seed);
            println!("secret_bits {bits}");
            println!("k_max {kmax}");
            println!("recovered {}", demo.recovered);
            ExitCode::SUCCESS
        }
    }
}
