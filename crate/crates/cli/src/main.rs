//! `fedcl` command-line harness.
//!
//! Exit codes: 0 success, 1 an experiment or verification failed, 2 invalid
//! configuration or arguments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedcl_core::data::{synthetic_generate_with, write_csv, SyntheticSpec};
use fedcl_core::suite::{
    emit_table, parse_config_with, run_suite, verify_suite, BenchmarkSuite, ResultsStore, SuiteOverrides, TableFormat,
};
use fedcl_core::Error;

const DEFAULT_OUT: &str = "results";

#[derive(Parser)]
#[command(name = "fedcl", version, about = "Federated and federated-continual learning benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment of a suite and print the comparison table.
    Run(SuiteArgs),
    /// Print the comparison table of a results directory.
    Table {
        #[command(flatten)]
        out: OutArg,
        #[arg(long, default_value = "markdown")]
        format: TableFormat,
    },
    /// Re-run a suite and check the results against the stored ones.
    Verify(SuiteArgs),
    /// Write a synthetic dataset in the scene CSV schema.
    Synth {
        /// Destination CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
        #[arg(long, default_value_t = 0.0)]
        task_shift: f64,
    },
}

#[derive(Args)]
struct OutArg {
    /// Results directory (overrides the config file's [output] dir).
    #[arg(long, env = "FEDCL_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    /// Suite configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Dataset CSV replacing the configured data source.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed replacing every experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArg,
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
}

enum Failure {
    Config(Error),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load_suite(args: &SuiteArgs) -> Result<(BenchmarkSuite, ResultsStore), Failure> {
    let overrides = SuiteOverrides {
        data: args.data.clone(),
        seed: args.seed,
        output_dir: args.out.out.clone(),
    };
    let suite = parse_config_with(&args.config, &overrides).map_err(|e| match e {
        Error::Io { .. } | Error::Config { .. } => Failure::Config(e),
        other => Failure::Run(other.to_string()),
    })?;
    let dir = suite.output_dir().cloned().unwrap_or_else(|| DEFAULT_OUT.into());
    let store = ResultsStore::open(dir)?;
    Ok((suite, store))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let (suite, store) = load_suite(&args)?;
            eprintln!("running {} experiment(s) into {}", suite.experiments().len(), store.root().display());
            let outcome = run_suite(&suite, &store);
            for r in &outcome.records {
                if let fedcl_core::suite::RunStatus::Failed { message } = &r.status {
                    eprintln!("run {} failed: {message}", r.run_id);
                }
            }
            for (id, e) in &outcome.store_errors {
                eprintln!("run {id}: {e}");
            }
            if outcome.records.iter().any(|r| r.is_completed()) {
                print!("{}", emit_table(&outcome.records, args.format)?);
            }
            match outcome.failed() {
                0 => Ok(()),
                n => Err(Failure::Run(format!("{n} of {} experiment(s) failed", outcome.records.len()))),
            }
        }
        Command::Table { out, format } => {
            let store = ResultsStore::open(out.out.unwrap_or_else(|| DEFAULT_OUT.into()))?;
            print!("{}", emit_table(&store.records()?, format)?);
            Ok(())
        }
        Command::Verify(args) => {
            let (suite, store) = load_suite(&args)?;
            let mut bad = 0;
            for (id, res) in verify_suite(&suite, &store) {
                match res {
                    Ok(()) => println!("{id}: ok"),
                    Err(e) => {
                        bad += 1;
                        println!("{id}: {e}");
                    }
                }
            }
            if bad == 0 {
                Ok(())
            } else {
                Err(Failure::Run(format!("{bad} run(s) did not reproduce")))
            }
        }
        Command::Synth {
            out,
            n,
            seed,
            noise_std,
            task_shift,
        } => {
            let spec = SyntheticSpec {
                n,
                seed,
                noise_std,
                task_shift,
            };
            let (ds, _) = synthetic_generate_with(&spec).map_err(Failure::Config)?;
            let file = std::fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
            write_csv(&ds, file)?;
            eprintln!("wrote {n} rows to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("invalid configuration: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
