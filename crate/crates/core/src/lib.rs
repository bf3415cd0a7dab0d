//! Deterministic simulation of federated and federated-continual learning
//! for multi-output regression on tabular scene features.

pub mod cl;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod rng;
pub mod strategy;
pub mod suite;

pub use cl::{ClMethod, PenaltyConfig};
pub use data::{Dataset, SceneSample};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use nn::{Architecture, MlpModel, OptimizerSpec, ParameterVector};
pub use orchestrator::{
    run_fcl, run_fl, DataSource, ExperimentConfig, FclOutcome, FclSchedule, RoundLog, RunMode,
};
pub use strategy::{StrategyConfig, StrategyKind};
