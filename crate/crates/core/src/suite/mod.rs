//! Benchmark suites: config files, batch execution, persisted results and
//! comparison tables.

mod config;
mod store;
mod table;

pub use config::{parse_config, parse_config_str, parse_config_with, SuiteOverrides};
pub use store::{FclStages, ResultsStore, RunRecord, RunStatus};
pub use table::{emit_table, parse_csv_table, CsvTable, TableFormat};

use std::path::PathBuf;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::orchestrator::{run_fcl, run_fl, ExperimentConfig, FclSchedule, RunMode};

/// Content hash of a config: equal configs give equal ids, any field change
/// gives a new one.
pub fn run_id(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("configs always serialize");
    let digest = Sha256::digest(&canonical);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSuite {
    experiments: Vec<ExperimentConfig>,
    output_dir: Option<PathBuf>,
}

impl BenchmarkSuite {
    /// Duplicate configs collapse to one experiment.
    pub fn new(experiments: Vec<ExperimentConfig>, output_dir: Option<PathBuf>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let experiments: Vec<_> = experiments.into_iter().filter(|c| seen.insert(run_id(c))).collect();
        if experiments.is_empty() {
            return Err(Error::Config {
                key: "experiment".into(),
                message: "suite has no experiments".into(),
            });
        }
        Ok(Self {
            experiments,
            output_dir,
        })
    }

    pub fn experiments(&self) -> &[ExperimentConfig] {
        &self.experiments
    }

    pub fn output_dir(&self) -> Option<&PathBuf> {
        self.output_dir.as_ref()
    }

    pub fn run_ids(&self) -> Vec<String> {
        self.experiments.iter().map(run_id).collect()
    }
}

/// Runs one experiment and packages the result as a record.
pub fn execute(config: &ExperimentConfig) -> RunRecord {
    let id = run_id(config);
    let outcome = match config.mode {
        RunMode::Fl => run_fl(config).map(|rounds| (rounds, None)),
        RunMode::Fcl => run_fcl(
            config,
            FclSchedule {
                rounds_per_task: config.rounds,
            },
        )
        .map(|o| {
            let stages = FclStages {
                after_task1: o.after_task1.clone(),
                after_task2: o.after_task2.clone(),
                task1_after_task2: o.task1_after_task2.clone(),
            };
            (o.rounds, Some(stages))
        }),
    };
    match outcome {
        Ok((rounds, fcl)) => RunRecord::completed(id, config.clone(), rounds, fcl),
        Err(e) => RunRecord::failed(id, config.clone(), e.to_string()),
    }
}

/// Outcome of a whole suite.
#[derive(Debug)]
pub struct SuiteOutcome {
    pub records: Vec<RunRecord>,
    /// Problems writing or verifying records, keyed by run id.
    pub store_errors: Vec<(String, Error)>,
}

impl SuiteOutcome {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| !r.is_completed()).count() + self.store_errors.len()
    }
}

/// Runs every experiment (concurrently) and persists each record in suite
/// order. One failing experiment does not stop the others.
pub fn run_suite(suite: &BenchmarkSuite, store: &ResultsStore) -> SuiteOutcome {
    let records: Vec<RunRecord> = suite.experiments.par_iter().map(execute).collect();
    let mut store_errors = Vec::new();
    for r in &records {
        if let Err(e) = store.record(r) {
            store_errors.push((r.run_id.clone(), e));
        }
    }
    SuiteOutcome { records, store_errors }
}

/// Re-runs every experiment and compares with the stored record. Returns the
/// ids that matched; mismatches and missing records are errors.
pub fn verify_suite(suite: &BenchmarkSuite, store: &ResultsStore) -> Vec<(String, Result<()>)> {
    let fresh: Vec<RunRecord> = suite.experiments.par_iter().map(execute).collect();
    fresh
        .into_iter()
        .map(|r| {
            let id = r.run_id.clone();
            (id, store.verify(&r))
        })
        .collect()
}
