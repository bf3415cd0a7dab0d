use crate::cl::{
    compute_fisher, ewc_online_update, ewc_penalty, fedprox_penalty, mas_importance, nr_mixed_batches, nr_store,
    AnchorParams, ClMethod, ImportanceKind, ImportanceMap, ReplayBuffer, SiAccumulator,
};
use crate::data::{features_matrix, labels_matrix, minibatches, Dataset, SceneSample};
use crate::error::{Error, Result};
use crate::nn::{mse_grad, mse_loss, GradientVector, Matrix, MlpModel, Mode, Optimizer, ParameterVector};
use crate::orchestrator::{Event, ExperimentConfig, Observer};
use crate::rng::{derive_seed, stream, Purpose};
use crate::strategy::{ClientUpdate, StrategyKind};

/// Seed for a client's minibatch order in a given global round.
pub fn client_batch_seed(seed: u64, client: usize, round: usize) -> u64 {
    derive_seed(seed, &[client as u64, round as u64])
}

/// Seed for the FedDistill teacher's minibatch order.
pub fn teacher_batch_seed(seed: u64, client: usize, round: usize) -> u64 {
    derive_seed(seed, &[client as u64, round as u64, Purpose::Teacher as u64])
}

/// Per-round context handed to every client.
#[derive(Clone, Copy)]
pub struct RoundContext<'a> {
    pub config: &'a ExperimentConfig,
    /// Global round counter, continuous across tasks.
    pub round: usize,
    pub task: usize,
    /// First round of a task: SI restarts its path integral here.
    pub task_start: bool,
    pub observer: &'a dyn Observer,
}

/// Continual-learning state kept by one client between tasks.
#[derive(Debug, Clone)]
pub struct ClState {
    method: ClMethod,
    anchors: Vec<AnchorParams>,
    importances: Vec<ImportanceMap>,
    cumulative: Option<ImportanceMap>,
    si: Option<SiAccumulator>,
    replay: Option<ReplayBuffer>,
}

impl ClState {
    fn new(method: ClMethod, config: &ExperimentConfig) -> Result<Self> {
        let replay = match method {
            ClMethod::Nr => Some(ReplayBuffer::new(config.penalty.replay_capacity)?),
            _ => None,
        };
        Ok(Self {
            method,
            anchors: Vec::new(),
            importances: Vec::new(),
            cumulative: None,
            si: None,
            replay,
        })
    }

    pub fn method(&self) -> ClMethod {
        self.method
    }

    pub fn anchors(&self) -> &[AnchorParams] {
        &self.anchors
    }

    pub fn importances(&self) -> &[ImportanceMap] {
        &self.importances
    }

    pub fn replay(&self) -> Option<&ReplayBuffer> {
        self.replay.as_ref()
    }

    fn penalty_grad(&self, theta: &ParameterVector, lambda: f64) -> Result<Option<GradientVector>> {
        if self.anchors.is_empty() {
            return Ok(None);
        }
        Ok(Some(ewc_penalty(theta, &self.anchors, &self.importances, lambda)?.1))
    }

    /// Replaces the penalty terms with a single anchor weighted by the
    /// accumulated importance `omega`.
    fn set_cumulative(&mut self, task: usize, theta: ParameterVector, omega: ImportanceMap) -> Result<()> {
        // running Fisher maps already fold in the past
        let total = match &self.cumulative {
            Some(prev) if omega.kind() != ImportanceKind::FisherRunning => prev.add(&omega)?,
            _ => omega,
        };
        self.anchors = vec![AnchorParams {
            theta_star: theta,
            task_id: task,
        }];
        self.importances = vec![total.clone()];
        self.cumulative = Some(total);
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Teacher {
    model: MlpModel,
    optimizer: Optimizer,
}

/// Everything one simulated client owns. The shard never leaves the client.
#[derive(Debug, Clone)]
pub struct ClientState {
    id: usize,
    model: MlpModel,
    optimizer: Optimizer,
    shard: Dataset,
    cl: ClState,
    teacher: Option<Teacher>,
}

/// Result of one round of local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub update: ClientUpdate,
    /// Mean minibatch MSE over the round (label term only).
    pub train_loss: f64,
}

impl ClientState {
    pub fn new(id: usize, init: &MlpModel, shard: Dataset, config: &ExperimentConfig) -> Result<Self> {
        let teacher = (config.strategy.kind == StrategyKind::FedDistill).then(|| Teacher {
            model: MlpModel::init(
                config.architecture.clone(),
                &mut stream(config.seed, Purpose::Teacher, &[id as u64]),
            ),
            optimizer: config.client_optimizer.build(),
        });
        Ok(Self {
            id,
            model: init.clone(),
            optimizer: config.client_optimizer.build(),
            shard,
            cl: ClState::new(config.cl_method, config)?,
            teacher,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn shard(&self) -> &Dataset {
        &self.shard
    }

    /// FedDistill teacher parameters; never aggregated.
    pub fn teacher_params(&self) -> Option<ParameterVector> {
        self.teacher.as_ref().map(|t| t.model.extract_params())
    }

    pub fn cl(&self) -> &ClState {
        &self.cl
    }

    /// Swaps in the data for the next task.
    pub fn set_shard(&mut self, shard: Dataset) {
        self.shard = shard;
    }

    pub fn reset_optimizer(&mut self) {
        self.optimizer.reset();
        if let Some(t) = &mut self.teacher {
            t.optimizer.reset();
        }
    }

    fn read_shard(&self, observer: &dyn Observer) -> &Dataset {
        observer.record(Event::ShardRead {
            reader: self.id,
            owner: self.id,
        });
        &self.shard
    }

    fn batches(&self, batch_size: usize, seed: u64, epoch: u64, ctx: &RoundContext) -> Result<Vec<Vec<SceneSample>>> {
        let shard = self.read_shard(ctx.observer);
        match &self.cl.replay {
            Some(buf) if !buf.is_empty() => {
                nr_mixed_batches(buf, shard, batch_size, ctx.config.penalty.mix_ratio, seed, epoch)
            }
            _ => minibatches(shard, batch_size, seed, epoch),
        }
    }

    fn batch_size(&self, config: &ExperimentConfig) -> Result<usize> {
        if self.shard.len() < 2 {
            return Err(Error::TooFewSamples(self.shard.len()));
        }
        Ok(config.batch_size.min(self.shard.len()))
    }

    /// Trains the persistent teacher on the local shard with plain MSE.
    fn train_teacher(&mut self, ctx: &RoundContext) -> Result<()> {
        let bs = self.batch_size(ctx.config)?;
        let seed = teacher_batch_seed(ctx.config.seed, self.id, ctx.round);
        let Some(mut teacher) = self.teacher.take() else {
            return Ok(());
        };
        let trainable = teacher.model.layout().trainable_mask().to_vec();
        for epoch in 0..ctx.config.local_epochs as u64 {
            for batch in minibatches(self.read_shard(ctx.observer), bs, seed, epoch)? {
                let x = features_matrix(batch.iter());
                let y = labels_matrix(batch.iter());
                let (_, grad, trace) = teacher.model.loss_and_grad(&x, &y, Mode::Train, None)?;
                teacher.model.commit_running_stats(&trace);
                teacher
                    .optimizer
                    .step_masked(teacher.model.params_mut(), grad.values(), Some(&trainable))?;
            }
        }
        self.teacher = Some(teacher);
        Ok(())
    }

    /// One round of local training starting from the broadcast `global`.
    pub fn local_train(&mut self, global: &ParameterVector, ctx: &RoundContext) -> Result<LocalOutcome> {
        let cfg = ctx.config;
        ctx.observer.record(Event::LocalTrainStart {
            client: self.id,
            round: ctx.round,
            task: ctx.task,
        });
        let kind = cfg.strategy.kind;
        if kind == StrategyKind::FedBn {
            let mask = global.bn_mask().to_vec();
            self.model.inject_params_except(global, &mask)?;
        } else {
            self.model.inject_params(global)?;
        }
        if !cfg.persist_client_optimizer {
            self.optimizer.reset();
        }
        if self.cl.method == ClMethod::Si && (ctx.task_start || self.cl.si.is_none()) {
            let theta = self.model.extract_params();
            match &mut self.cl.si {
                Some(acc) => acc.restart(theta),
                None => self.cl.si = Some(SiAccumulator::new(theta, cfg.penalty.si_xi)?),
            }
        }
        if kind == StrategyKind::FedDistill {
            self.train_teacher(ctx)?;
        }

        let bs = self.batch_size(cfg)?;
        let seed = client_batch_seed(cfg.seed, self.id, ctx.round);
        let lambda = cfg.penalty.lambda_for(self.cl.method);
        let trainable = self.model.layout().trainable_mask().to_vec();
        let w = cfg.strategy.distill_weight;
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for epoch in 0..cfg.local_epochs as u64 {
            for batch in self.batches(bs, seed, epoch, ctx)? {
                let x = features_matrix(batch.iter());
                let y = labels_matrix(batch.iter());
                let trace = self.model.trace(&x, Mode::Train)?;
                let (loss, _) = mse_loss(trace.output(), &y)?;
                let mut dout = mse_grad(trace.output(), &y)?;
                if let Some(teacher) = &self.teacher {
                    let soft = teacher.model.predict(&x)?;
                    let dsoft = mse_grad(trace.output(), &soft)?;
                    mix_grads(&mut dout, &dsoft, w);
                }
                let mut grad = self.model.backward_trace(&trace, &dout)?;
                if kind == StrategyKind::FedProx {
                    let theta = self.model.extract_params();
                    grad.accumulate(&fedprox_penalty(&theta, global, cfg.strategy.mu)?.1)?;
                }
                if self.cl.method.is_penalty() {
                    if let Some(pg) = self.cl.penalty_grad(&self.model.extract_params(), lambda)? {
                        grad.accumulate(&pg)?;
                    }
                }
                self.model.commit_running_stats(&trace);
                match &mut self.cl.si {
                    Some(acc) => {
                        let before = self.model.params().to_vec();
                        self.optimizer
                            .step_masked(self.model.params_mut(), grad.values(), Some(&trainable))?;
                        let delta: Vec<f64> = self
                            .model
                            .params()
                            .iter()
                            .zip(&before)
                            .zip(&trainable)
                            .map(|((a, b), t)| if *t { a - b } else { 0.0 })
                            .collect();
                        acc.accumulate(&grad, &delta)?;
                    }
                    None => self
                        .optimizer
                        .step_masked(self.model.params_mut(), grad.values(), Some(&trainable))?,
                }
                if !loss.is_finite() {
                    return Err(Error::NonFinite("local training loss"));
                }
                loss_sum += loss;
                n_batches += 1;
            }
        }
        if !self.model.params().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("client parameters"));
        }
        ctx.observer.record(Event::LocalTrainEnd {
            client: self.id,
            round: ctx.round,
            task: ctx.task,
        });
        Ok(LocalOutcome {
            update: ClientUpdate {
                client_id: self.id,
                params: self.model.extract_params(),
                n_samples: self.shard.len(),
            },
            train_loss: if n_batches == 0 { 0.0 } else { loss_sum / n_batches as f64 },
        })
    }

    /// Task-boundary bookkeeping after the last local round of `task`:
    /// importance and anchor for penalty methods, reservoir fill for NR.
    pub fn end_task(&mut self, task: usize, ctx: &RoundContext) -> Result<()> {
        let cfg = ctx.config;
        let p = &cfg.penalty;
        let coord_seed = derive_seed(cfg.seed, &[self.id as u64, task as u64]);
        let theta = self.model.extract_params();
        match self.cl.method {
            ClMethod::None => return Ok(()),
            ClMethod::Ewc => {
                let f = compute_fisher(&self.model, self.read_shard(ctx.observer), p.fisher_samples, coord_seed)?;
                self.cl.anchors.push(AnchorParams {
                    theta_star: theta,
                    task_id: task,
                });
                self.cl.importances.push(f);
            }
            ClMethod::EwcOnline => {
                let f = compute_fisher(&self.model, self.read_shard(ctx.observer), p.fisher_samples, coord_seed)?;
                let running = match &self.cl.cumulative {
                    Some(prev) => ewc_online_update(prev, &f, p.gamma_online)?,
                    None => ewc_online_update(
                        &ImportanceMap::zeros(ImportanceKind::FisherRunning, theta.layout().clone()),
                        &f,
                        p.gamma_online,
                    )?,
                };
                self.cl.set_cumulative(task, theta, running)?;
            }
            ClMethod::Si => {
                let acc = self
                    .cl
                    .si
                    .as_mut()
                    .ok_or_else(|| Error::invalid("si", "task ended before any local training"))?;
                let omega = acc.consolidate(&theta)?;
                self.cl.set_cumulative(task, theta, omega)?;
            }
            ClMethod::Mas => {
                let x = self.read_shard(ctx.observer).features();
                let omega = mas_importance(&self.model, &x, p.fisher_samples, coord_seed)?;
                self.cl.set_cumulative(task, theta, omega)?;
            }
            ClMethod::Nr => {
                let seed = derive_seed(cfg.seed, &[self.id as u64]);
                let shard = self.read_shard(ctx.observer).clone();
                let buf = self.cl.replay.as_mut().expect("NR clients own a buffer");
                nr_store(buf, &shard, seed);
                ctx.observer.record(Event::ReplayStored {
                    client: self.id,
                    task,
                    stored: buf.len(),
                });
                return Ok(());
            }
        }
        ctx.observer.record(Event::ImportanceComputed { client: self.id, task });
        Ok(())
    }
}

/// `d <- (1 - w) d + w d_soft`. With `w == 0` the label gradient is
/// returned unchanged.
fn mix_grads(d: &mut Matrix, d_soft: &Matrix, w: f64) {
    for (a, b) in d.as_mut_slice().iter_mut().zip(d_soft.as_slice()) {
        *a = (1.0 - w) * *a + w * b;
    }
}
