//! Suite configuration files.
//!
//! A suite file has three flat sections: `[data]`, `[experiment]` and an
//! optional `[sweep]` whose lists expand into a cartesian product. See the
//! README for the full key list.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::cl::{ClMethod, PenaltyConfig};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::nn::{Activation, Architecture, OptimizerSpec};
use crate::orchestrator::{DataSource, ExperimentConfig, RunMode};
use crate::strategy::{StrategyConfig, StrategyKind};
use crate::suite::BenchmarkSuite;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    #[serde(default)]
    data: DataSection,
    experiment: ExperimentSection,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum SourceKind {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    source: Option<SourceKind>,
    path: Option<PathBuf>,
    n: Option<usize>,
    noise_std: Option<f64>,
    seed: Option<u64>,
    task_shift: Option<f64>,
    split_ratio: Option<f64>,
    augment: Option<bool>,
    augment_sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OptimizerName {
    Sgd,
    Adam,
}

impl OptimizerName {
    fn spec(self, lr: f64) -> OptimizerSpec {
        match self {
            OptimizerName::Sgd => OptimizerSpec::sgd(lr),
            OptimizerName::Adam => OptimizerSpec::adam(lr),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    mode: Option<RunMode>,
    strategy: Option<StrategyKind>,
    clients: Option<usize>,
    rounds: Option<usize>,
    local_epochs: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    optimizer: Option<OptimizerName>,
    lr: Option<f64>,
    activation: Option<Activation>,
    cl_method: Option<ClMethod>,
    lambda: Option<f64>,
    gamma_online: Option<f64>,
    si_xi: Option<f64>,
    fisher_samples: Option<usize>,
    replay_capacity: Option<usize>,
    mix_ratio: Option<f64>,
    mu: Option<f64>,
    server_optimizer: Option<OptimizerName>,
    server_lr: Option<f64>,
    distill_weight: Option<f64>,
    sample_weighted: Option<bool>,
    persist_client_optimizer: Option<bool>,
    reset_optimizer_per_task: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    strategies: Option<Vec<StrategyKind>>,
    clients: Option<Vec<usize>>,
    augment: Option<Vec<bool>>,
    cl_methods: Option<Vec<ClMethod>>,
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct SuiteOverrides {
    /// Use this CSV instead of the configured data source.
    pub data: Option<PathBuf>,
    /// Replace every experiment seed (including a `sweep.seeds` list).
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

fn missing(key: &str) -> Error {
    Error::Config {
        key: key.into(),
        message: "required key is missing".into(),
    }
}

fn sweep_list<T: Copy>(key: &str, list: Option<Vec<T>>, base: Option<T>, required: bool) -> Result<Vec<Option<T>>> {
    match list {
        Some(v) if v.is_empty() => Err(Error::Config {
            key: key.into(),
            message: "sweep lists must not be empty".into(),
        }),
        Some(v) => Ok(v.into_iter().map(Some).collect()),
        None if required && base.is_none() => Err(missing(key.trim_start_matches("sweep."))),
        None => Ok(vec![base]),
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<BenchmarkSuite> {
    parse_config_with(path, &SuiteOverrides::default())
}

pub fn parse_config_with(path: impl AsRef<Path>, overrides: &SuiteOverrides) -> Result<BenchmarkSuite> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base_dir, overrides)
}

/// Parses suite text; relative CSV paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path, overrides: &SuiteOverrides) -> Result<BenchmarkSuite> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
        key: "<file>".into(),
        message: e.to_string(),
    })?;
    let file: SuiteFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        key: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    build_suite(file, base_dir, overrides)
}

fn build_suite(file: SuiteFile, base_dir: &Path, overrides: &SuiteOverrides) -> Result<BenchmarkSuite> {
    let SuiteFile {
        data: d,
        experiment: e,
        sweep,
        output,
    } = file;

    let data = match (&overrides.data, d.source.unwrap_or_default()) {
        (Some(p), _) => DataSource::Csv { path: p.clone() },
        (None, SourceKind::Csv) => {
            let p = d.path.clone().ok_or_else(|| missing("data.path"))?;
            DataSource::Csv {
                path: if p.is_relative() { base_dir.join(p) } else { p },
            }
        }
        (None, SourceKind::Synthetic) => {
            if d.path.is_some() {
                return Err(Error::Config {
                    key: "data.path".into(),
                    message: "only valid with source = \"csv\"".into(),
                });
            }
            DataSource::Synthetic(SyntheticSpec {
                n: d.n.unwrap_or(2000),
                seed: d.seed.unwrap_or(0),
                noise_std: d.noise_std.unwrap_or(0.1),
                task_shift: d.task_shift.unwrap_or(0.0),
            })
        }
    };

    let cl_base = e.cl_method;
    let mode = e.mode.unwrap_or(if cl_base.is_some() || sweep.cl_methods.is_some() {
        RunMode::Fcl
    } else {
        RunMode::Fl
    });
    let rounds = e.rounds.ok_or_else(|| missing("experiment.rounds"))?;
    let strategy_required = mode == RunMode::Fl;
    let strategies = sweep_list(
        "sweep.strategies",
        sweep.strategies,
        e.strategy.or((!strategy_required).then_some(StrategyKind::FedAvg)),
        true,
    )
    .map_err(|err| relabel(err, "strategies", "experiment.strategy"))?;
    let clients = sweep_list("sweep.clients", sweep.clients, e.clients, true)
        .map_err(|err| relabel(err, "clients", "experiment.clients"))?;
    let augments = sweep_list("sweep.augment", sweep.augment, Some(d.augment.unwrap_or(false)), false)?;
    let cl_methods = sweep_list("sweep.cl_methods", sweep.cl_methods, Some(cl_base.unwrap_or_default()), false)?;
    let seeds = match overrides.seed {
        Some(s) => vec![Some(s)],
        None => sweep_list("sweep.seeds", sweep.seeds, Some(e.seed.unwrap_or(0)), false)?,
    };

    let defaults = ExperimentConfig::default();
    let penalty_defaults = PenaltyConfig::default();
    let strategy_defaults = StrategyConfig::default();
    let mut experiments = Vec::new();
    for &strategy in &strategies {
        for &n_clients in &clients {
            for &augment in &augments {
                for &cl in &cl_methods {
                    for &seed in &seeds {
                        let cfg = ExperimentConfig {
                            mode,
                            data: data.clone(),
                            split_ratio: d.split_ratio.unwrap_or(defaults.split_ratio),
                            clients: n_clients.expect("required above"),
                            rounds,
                            local_epochs: e.local_epochs.unwrap_or(defaults.local_epochs),
                            batch_size: e.batch_size.unwrap_or(defaults.batch_size),
                            seed: seed.expect("defaulted above"),
                            client_optimizer: e
                                .optimizer
                                .unwrap_or(OptimizerName::Adam)
                                .spec(e.lr.unwrap_or(1e-3)),
                            strategy: StrategyConfig {
                                kind: strategy.expect("required above"),
                                mu: e.mu.unwrap_or(strategy_defaults.mu),
                                server_optimizer: e
                                    .server_optimizer
                                    .unwrap_or(OptimizerName::Adam)
                                    .spec(e.server_lr.unwrap_or(strategy_defaults.server_optimizer.learning_rate())),
                                distill_weight: e.distill_weight.unwrap_or(strategy_defaults.distill_weight),
                                sample_weighted: e.sample_weighted.unwrap_or(false),
                            },
                            cl_method: cl.expect("defaulted above"),
                            penalty: PenaltyConfig {
                                lambda: e.lambda,
                                gamma_online: e.gamma_online.unwrap_or(penalty_defaults.gamma_online),
                                si_xi: e.si_xi.unwrap_or(penalty_defaults.si_xi),
                                fisher_samples: e.fisher_samples.unwrap_or(penalty_defaults.fisher_samples),
                                replay_capacity: e.replay_capacity.unwrap_or(penalty_defaults.replay_capacity),
                                mix_ratio: e.mix_ratio.unwrap_or(penalty_defaults.mix_ratio),
                            },
                            augment: augment.expect("defaulted above"),
                            augment_sigma: d.augment_sigma.unwrap_or(defaults.augment_sigma),
                            architecture: Architecture {
                                activation: e.activation.unwrap_or_default(),
                                ..Architecture::default()
                            },
                            persist_client_optimizer: e.persist_client_optimizer.unwrap_or(true),
                            reset_optimizer_per_task: e.reset_optimizer_per_task.unwrap_or(true),
                        };
                        cfg.validate().map_err(file_key)?;
                        experiments.push(cfg);
                    }
                }
            }
        }
    }
    BenchmarkSuite::new(experiments, overrides.output_dir.clone().or(output.dir))
}

fn relabel(err: Error, from: &str, to: &str) -> Error {
    match err {
        Error::Config { key, message } if key == from => Error::Config {
            key: to.into(),
            message,
        },
        other => other,
    }
}

/// Maps a validation key on [`ExperimentConfig`] back to the file key.
fn file_key(err: Error) -> Error {
    let Error::Config { key, message } = err else {
        return err;
    };
    let key = match key.as_str() {
        "split_ratio" | "augment_sigma" => format!("data.{key}"),
        "client_optimizer" => "experiment.lr".into(),
        "strategy.server_optimizer" => "experiment.server_lr".into(),
        k => format!("experiment.{}", k.trim_start_matches("strategy.")),
    };
    Error::Config { key, message }
}
