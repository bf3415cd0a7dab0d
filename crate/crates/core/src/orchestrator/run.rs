use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{augment, load_csv, partition_clients, split_tasks, synthetic_generate_with, train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{compute_report, MetricsReport};
use crate::nn::{Architecture, Matrix, MlpModel, ParameterVector};
use crate::orchestrator::{
    ClientState, DataSource, Event, ExperimentConfig, LocalOutcome, NoopObserver, Observer, RoundContext, RunMode,
};
use crate::rng::{derive_seed, stream, Purpose};
use crate::strategy::{aggregate_mean, fedbn_aggregate, fedbn_server_view, FedOptServer, StrategyKind};

pub const TASK_NAMES: [&str; 2] = ["circle", "arrow"];

/// One completed aggregation round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundLog {
    pub task: usize,
    /// 1-based round index within the task.
    pub round: usize,
    pub metrics: MetricsReport,
    /// Mean minibatch training loss per client, ordered by client id.
    pub client_losses: Vec<f64>,
    pub wall_time_ms: f64,
}

impl PartialEq for RoundLog {
    /// Bitwise on every numeric field except wall time.
    fn eq(&self, other: &Self) -> bool {
        self.task == other.task
            && self.round == other.round
            && self.metrics.bit_eq(&other.metrics)
            && self.client_losses.len() == other.client_losses.len()
            && self
                .client_losses
                .iter()
                .zip(&other.client_losses)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Ordered tasks (circle then arrow) and the number of rounds spent on each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FclSchedule {
    pub rounds_per_task: usize,
}

impl Default for FclSchedule {
    fn default() -> Self {
        Self { rounds_per_task: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FclOutcome {
    pub rounds: Vec<RoundLog>,
    /// Global parameters at the end of each task.
    pub params_after_task1: ParameterVector,
    pub params_after_task2: ParameterVector,
    /// Global model after task 1 on the circle test subset.
    pub after_task1: MetricsReport,
    /// Global model after task 2 on the full test set.
    pub after_task2: MetricsReport,
    /// Global model after task 2 on the circle test subset.
    pub task1_after_task2: MetricsReport,
}

impl FclOutcome {
    /// How much task-1 test loss grew while learning task 2.
    pub fn forgetting(&self) -> f64 {
        self.task1_after_task2.loss() - self.after_task1.loss()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Load or generate, split, then augment the training part only.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let ds = match &config.data {
        DataSource::Csv { path } => load_csv(path)?,
        DataSource::Synthetic(spec) => synthetic_generate_with(spec)?.0,
    };
    let (train, test) = train_test_split(&ds, config.split_ratio, derive_seed(config.seed, &[Purpose::Split as u64]))?;
    let train = if config.augment {
        augment(&train, config.augment_sigma, derive_seed(config.seed, &[Purpose::Augment as u64]))?
    } else {
        train
    };
    Ok(PreparedData { train, test })
}

/// The shared starting model every client receives.
pub fn init_model(config: &ExperimentConfig) -> MlpModel {
    MlpModel::init(config.architecture.clone(), &mut stream(config.seed, Purpose::Init, &[]))
}

/// Eval-mode metrics of `params` on `test`. Rows are processed in chunks of
/// `batch` (all at once when `None`); eval-mode BN makes the result
/// independent of the chunk size.
pub fn evaluate(params: &ParameterVector, test: &Dataset, arch: &Architecture) -> Result<MetricsReport> {
    evaluate_batched(params, test, arch, None)
}

pub fn evaluate_batched(
    params: &ParameterVector,
    test: &Dataset,
    arch: &Architecture,
    batch: Option<usize>,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("evaluation set"));
    }
    let model = MlpModel::from_params(arch.clone(), params)?;
    let step = batch.unwrap_or(test.len()).max(1);
    let mut pred = Vec::with_capacity(test.len() * arch.outputs);
    for chunk in test.samples.chunks(step) {
        let x = crate::data::features_matrix(chunk.iter());
        pred.extend_from_slice(model.predict(&x)?.as_slice());
    }
    let pred = Matrix::from_vec(test.len(), arch.outputs, pred)?;
    compute_report(&pred, &test.labels())
}

struct Server {
    global: ParameterVector,
    fedopt: Option<FedOptServer>,
}

impl Server {
    fn new(config: &ExperimentConfig, init: &MlpModel) -> Self {
        let fedopt = (config.strategy.kind == StrategyKind::FedOpt)
            .then(|| FedOptServer::new(config.strategy.server_optimizer, config.strategy.sample_weighted));
        Self {
            global: init.extract_params(),
            fedopt,
        }
    }

    fn aggregate(&mut self, config: &ExperimentConfig, outcomes: &[LocalOutcome]) -> Result<()> {
        let updates: Vec<_> = outcomes.iter().map(|o| o.update.clone()).collect();
        let weighted = config.strategy.sample_weighted;
        self.global = match (&mut self.fedopt, config.strategy.kind) {
            (Some(server), _) => server.step(&self.global, &updates)?,
            (None, StrategyKind::FedBn) => {
                // BN slots of the broadcast vector are ignored by clients; the
                // server keeps client 0's so evaluation has a complete model.
                let per_client = fedbn_aggregate(&updates, weighted)?;
                fedbn_server_view(&per_client, &updates)?
            }
            (None, _) => aggregate_mean(&updates, weighted)?,
        };
        Ok(())
    }
}

struct Simulation<'a> {
    config: &'a ExperimentConfig,
    observer: &'a dyn Observer,
    clients: Vec<ClientState>,
    server: Server,
    global_round: usize,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a ExperimentConfig, shards: Vec<Dataset>, observer: &'a dyn Observer) -> Result<Self> {
        let init = init_model(config);
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| ClientState::new(id, &init, shard, config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            observer,
            clients,
            server: Server::new(config, &init),
            global_round: 0,
        })
    }

    /// Runs `rounds` rounds of `task`, evaluating each on `test`.
    fn run_task(&mut self, task: usize, rounds: usize, test: &Dataset, end_task: bool) -> Result<Vec<RoundLog>> {
        let mut logs = Vec::with_capacity(rounds);
        for r in 0..rounds {
            let started = Instant::now();
            let ctx = RoundContext {
                config: self.config,
                round: self.global_round,
                task,
                task_start: r == 0,
                observer: self.observer,
            };
            let last = end_task && r + 1 == rounds;
            let global = &self.server.global;
            let results: Vec<Result<LocalOutcome>> = self
                .clients
                .par_iter_mut()
                .map(|c| {
                    let out = c.local_train(global, &ctx)?;
                    if last {
                        c.end_task(task, &ctx)?;
                    }
                    Ok(out)
                })
                .collect();
            let mut outcomes = Vec::with_capacity(results.len());
            for (client, res) in results.into_iter().enumerate() {
                outcomes.push(res.map_err(|e| Error::Client {
                    client,
                    round: self.global_round,
                    source: Box::new(e),
                })?);
            }
            self.server.aggregate(self.config, &outcomes)?;
            self.observer.record(Event::Aggregated {
                round: self.global_round,
                task,
            });
            let metrics = evaluate(&self.server.global, test, &self.config.architecture)?;
            self.observer.record(Event::Evaluated {
                round: self.global_round,
                task,
            });
            logs.push(RoundLog {
                task,
                round: r + 1,
                metrics,
                client_losses: outcomes.iter().map(|o| o.train_loss).collect(),
                wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            self.global_round += 1;
        }
        Ok(logs)
    }
}

/// Per-client training shards, ordered by client id.
pub fn client_shards(config: &ExperimentConfig, train: &Dataset) -> Result<Vec<Dataset>> {
    Ok(partition_clients(train, config.clients, derive_seed(config.seed, &[Purpose::Partition as u64]))?
        .into_iter()
        .map(|p| p.shard)
        .collect())
}

pub fn run_fl(config: &ExperimentConfig) -> Result<Vec<RoundLog>> {
    config.validate()?;
    let data = prepare_data(config)?;
    run_fl_with(config, &data, &NoopObserver)
}

/// Federated training on already prepared data.
pub fn run_fl_with(config: &ExperimentConfig, data: &PreparedData, observer: &dyn Observer) -> Result<Vec<RoundLog>> {
    config.validate()?;
    if config.mode != RunMode::Fl {
        return Err(Error::Config {
            key: "mode".into(),
            message: "run_fl needs mode = \"fl\"".into(),
        });
    }
    let mut sim = Simulation::new(config, client_shards(config, &data.train)?, observer)?;
    sim.run_task(0, config.rounds, &data.test, false)
}

pub fn run_fcl(config: &ExperimentConfig, schedule: FclSchedule) -> Result<FclOutcome> {
    config.validate()?;
    let data = prepare_data(config)?;
    run_fcl_with(config, schedule, &data, &NoopObserver)
}

/// Two-task federated continual training: circle samples first, then arrow
/// samples. `cl_method = none` gives the sequential baseline.
pub fn run_fcl_with(
    config: &ExperimentConfig,
    schedule: FclSchedule,
    data: &PreparedData,
    observer: &dyn Observer,
) -> Result<FclOutcome> {
    config.validate()?;
    if config.mode != RunMode::Fcl {
        return Err(Error::Config {
            key: "mode".into(),
            message: "run_fcl needs mode = \"fcl\"".into(),
        });
    }
    if schedule.rounds_per_task == 0 {
        return Err(Error::Config {
            key: "rounds".into(),
            message: "must be at least 1".into(),
        });
    }
    let test_tasks = split_tasks(&data.test)?;
    let shards = client_shards(config, &data.train)?
        .iter()
        .map(split_tasks)
        .collect::<Result<Vec<_>>>()?;
    let (task1, task2): (Vec<_>, Vec<_>) = shards.into_iter().map(|s| (s.task1, s.task2)).unzip();

    let mut sim = Simulation::new(config, task1, observer)?;
    let mut rounds = sim.run_task(0, schedule.rounds_per_task, &test_tasks.task1, true)?;
    let after_task1 = rounds.last().expect("at least one round").metrics.clone();
    let params_after_task1 = sim.server.global.clone();

    for (client, shard) in sim.clients.iter_mut().zip(task2) {
        client.set_shard(shard);
        if config.reset_optimizer_per_task {
            client.reset_optimizer();
        }
    }
    rounds.extend(sim.run_task(1, schedule.rounds_per_task, &data.test, false)?);
    let after_task2 = rounds.last().expect("at least one round").metrics.clone();
    let task1_after_task2 = evaluate(&sim.server.global, &test_tasks.task1, &config.architecture)?;
    Ok(FclOutcome {
        rounds,
        params_after_task1,
        params_after_task2: sim.server.global.clone(),
        after_task1,
        after_task2,
        task1_after_task2,
    })
}
