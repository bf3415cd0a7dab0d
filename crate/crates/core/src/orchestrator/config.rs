use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cl::{ClMethod, PenaltyConfig};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::nn::{Architecture, OptimizerSpec};
use crate::strategy::{StrategyConfig, StrategyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Csv { path: PathBuf },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    #[default]
    Fl,
    Fcl,
}

/// Everything that determines one simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: RunMode,
    pub data: DataSource,
    pub split_ratio: f64,
    pub clients: usize,
    /// Aggregation rounds (per task in FCL mode).
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub client_optimizer: OptimizerSpec,
    pub strategy: StrategyConfig,
    pub cl_method: ClMethod,
    pub penalty: PenaltyConfig,
    pub augment: bool,
    pub augment_sigma: f64,
    pub architecture: Architecture,
    /// Keep client optimizer state across rounds of the same task.
    pub persist_client_optimizer: bool,
    /// Reset client optimizer state when a new task starts.
    pub reset_optimizer_per_task: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Fl,
            data: DataSource::Synthetic(SyntheticSpec {
                n: 1000,
                seed: 0,
                noise_std: 0.1,
                task_shift: 0.0,
            }),
            split_ratio: 0.75,
            clients: 2,
            rounds: 10,
            local_epochs: 1,
            batch_size: 32,
            seed: 0,
            client_optimizer: OptimizerSpec::adam(1e-3),
            strategy: StrategyConfig::default(),
            cl_method: ClMethod::None,
            penalty: PenaltyConfig::default(),
            augment: false,
            augment_sigma: 0.01,
            architecture: Architecture::default(),
            persist_client_optimizer: true,
            reset_optimizer_per_task: true,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(config_err("clients", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(config_err("rounds", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(config_err("local_epochs", "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(config_err("batch_size", "must be at least 2"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(config_err("split_ratio", "must lie in (0, 1)"));
        }
        if !(self.augment_sigma >= 0.0 && self.augment_sigma.is_finite()) {
            return Err(config_err("augment_sigma", "must be finite and >= 0"));
        }
        self.client_optimizer
            .validate()
            .map_err(|e| config_err("client_optimizer", e.to_string()))?;
        self.strategy.validate()?;
        let p = &self.penalty;
        if p.lambda.is_some_and(|l| !(l >= 0.0 && l.is_finite())) {
            return Err(config_err("lambda", "must be finite and >= 0"));
        }
        if !(p.gamma_online > 0.0 && p.gamma_online <= 1.0) {
            return Err(config_err("gamma_online", "must lie in (0, 1]"));
        }
        if p.si_xi.is_nan() || p.si_xi <= 0.0 {
            return Err(config_err("si_xi", "must be > 0"));
        }
        if p.fisher_samples == 0 {
            return Err(config_err("fisher_samples", "must be at least 1"));
        }
        if p.replay_capacity == 0 {
            return Err(config_err("replay_capacity", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&p.mix_ratio) {
            return Err(config_err("mix_ratio", "must lie in [0, 1]"));
        }
        match self.mode {
            RunMode::Fl if self.cl_method != ClMethod::None => {
                Err(config_err("cl_method", "continual-learning methods need mode = \"fcl\""))
            }
            RunMode::Fcl if self.strategy.kind != StrategyKind::FedAvg => {
                Err(config_err("strategy", "FCL runs aggregate with fedavg only"))
            }
            _ => Ok(()),
        }
    }

    pub fn with_strategy(mut self, kind: StrategyKind) -> Self {
        self.strategy.kind = kind;
        self
    }
}
