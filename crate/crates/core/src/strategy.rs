//! Server-side aggregation strategies.

use serde::{Deserialize, Serialize};

pub use crate::cl::fedprox_penalty;
use crate::error::{Error, Result};
use crate::nn::{GradientVector, Optimizer, OptimizerSpec, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    #[default]
    FedAvg,
    FedBn,
    FedProx,
    FedOpt,
    FedDistill,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::FedAvg,
        StrategyKind::FedBn,
        StrategyKind::FedProx,
        StrategyKind::FedOpt,
        StrategyKind::FedDistill,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "FedAvg",
            StrategyKind::FedBn => "FedBN",
            StrategyKind::FedProx => "FedProx",
            StrategyKind::FedOpt => "FedOpt",
            StrategyKind::FedDistill => "FedDistill",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// FedProx proximal weight.
    pub mu: f64,
    /// FedOpt server optimizer.
    pub server_optimizer: OptimizerSpec,
    /// FedDistill weight on the teacher-matching term.
    pub distill_weight: f64,
    /// Weight client means by shard size instead of uniformly.
    pub sample_weighted: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::FedAvg,
            mu: 0.01,
            server_optimizer: OptimizerSpec::adam(0.01),
            distill_weight: 0.5,
            sample_weighted: false,
        }
    }
}

impl StrategyConfig {
    pub fn of(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config {
                key: "strategy.mu".into(),
                message: format!("must be finite and >= 0, got {}", self.mu),
            });
        }
        if !(0.0..=1.0).contains(&self.distill_weight) {
            return Err(Error::Config {
                key: "strategy.distill_weight".into(),
                message: format!("must lie in [0, 1], got {}", self.distill_weight),
            });
        }
        self.server_optimizer.validate().map_err(|e| Error::Config {
            key: "strategy.server_optimizer".into(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParameterVector,
    pub n_samples: usize,
}

fn check_updates(updates: &[ClientUpdate]) -> Result<&ParameterVector> {
    let first = &updates.first().ok_or(Error::EmptyDataset("client updates"))?.params;
    for u in &updates[1..] {
        first.check_compatible(&u.params)?;
    }
    Ok(first)
}

/// Unweighted elementwise mean of all client vectors, BN running statistics
/// included.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<ParameterVector> {
    aggregate_mean(updates, false)
}

/// Elementwise mean; with `sample_weighted` each client counts in proportion
/// to its shard size.
pub fn aggregate_mean(updates: &[ClientUpdate], sample_weighted: bool) -> Result<ParameterVector> {
    let first = check_updates(updates)?;
    let mut out = ParameterVector::zeros_like(first);
    if sample_weighted {
        let total: usize = updates.iter().map(|u| u.n_samples).sum();
        if total == 0 {
            return Err(Error::EmptyDataset("sample-weighted aggregation"));
        }
        for u in updates {
            let w = u.n_samples as f64 / total as f64;
            for (o, v) in out.values_mut().iter_mut().zip(u.params.values()) {
                *o += w * v;
            }
        }
    } else {
        for u in updates {
            for (o, v) in out.values_mut().iter_mut().zip(u.params.values()) {
                *o += v;
            }
        }
        let m = updates.len() as f64;
        out.values_mut().iter_mut().for_each(|o| *o /= m);
    }
    Ok(out)
}

/// Per-client vectors: non-BN slots take the mean, BN slots keep each
/// client's own values. Output order follows `updates`.
pub fn fedbn_aggregate(updates: &[ClientUpdate], sample_weighted: bool) -> Result<Vec<ParameterVector>> {
    let mean = aggregate_mean(updates, sample_weighted)?;
    let mask = mean.bn_mask().to_vec();
    Ok(updates
        .iter()
        .map(|u| {
            let mut v = mean.clone();
            for ((dst, own), bn) in v.values_mut().iter_mut().zip(u.params.values()).zip(&mask) {
                if *bn {
                    *dst = *own;
                }
            }
            v
        })
        .collect())
}

/// The vector used to evaluate a FedBN round on the server: shared slots from
/// the mean, BN slots from client 0 (or the lowest client id present).
pub fn fedbn_server_view(per_client: &[ParameterVector], updates: &[ClientUpdate]) -> Result<ParameterVector> {
    let pos = updates
        .iter()
        .enumerate()
        .min_by_key(|(_, u)| u.client_id)
        .map(|(i, _)| i)
        .ok_or(Error::EmptyDataset("client updates"))?;
    Ok(per_client[pos].clone())
}

/// FedOpt server: treats `global - mean(updates)` as a pseudo-gradient for
/// its own optimizer. BN running statistics are not optimized; they take the
/// plain mean.
#[derive(Debug, Clone)]
pub struct FedOptServer {
    optimizer: Optimizer,
    sample_weighted: bool,
}

impl FedOptServer {
    pub fn new(spec: OptimizerSpec, sample_weighted: bool) -> Self {
        Self {
            optimizer: spec.build(),
            sample_weighted,
        }
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn step(&mut self, global: &ParameterVector, updates: &[ClientUpdate]) -> Result<ParameterVector> {
        let mean = aggregate_mean(updates, self.sample_weighted)?;
        global.check_compatible(&mean)?;
        let layout = global.layout().clone();
        let trainable = layout.trainable_mask();
        let mut next = global.clone();
        match *self.optimizer.spec() {
            OptimizerSpec::Sgd { lr } => {
                // global - lr * (global - mean), written so that lr == 1
                // reproduces the mean exactly.
                for i in 0..next.len() {
                    let (g, m) = (global.values()[i], mean.values()[i]);
                    next.values_mut()[i] = if trainable[i] { m + (1.0 - lr) * (g - m) } else { m };
                }
            }
            OptimizerSpec::Adam { .. } => {
                let delta = GradientVector::from_values(
                    global
                        .values()
                        .iter()
                        .zip(mean.values())
                        .zip(trainable)
                        .map(|((g, m), t)| if *t { g - m } else { 0.0 })
                        .collect(),
                    layout.clone(),
                )?;
                self.optimizer.step_params(&mut next, &delta)?;
                for i in 0..next.len() {
                    if !trainable[i] {
                        next.values_mut()[i] = mean.values()[i];
                    }
                }
            }
        }
        Ok(next)
    }
}

/// Functional form of [`FedOptServer::step`].
pub fn fedopt_server_step(
    global: &ParameterVector,
    updates: &[ClientUpdate],
    server: &mut FedOptServer,
) -> Result<ParameterVector> {
    server.step(global, updates)
}
