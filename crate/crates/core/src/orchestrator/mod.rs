//! Round-based simulation of federated and federated-continual training.

mod client;
mod config;
mod run;

pub use client::{client_batch_seed, teacher_batch_seed, ClState, ClientState, LocalOutcome, RoundContext};
pub use config::{DataSource, ExperimentConfig, RunMode};
pub use run::{
    client_shards, evaluate, evaluate_batched, init_model, prepare_data, run_fcl, run_fcl_with, run_fl, run_fl_with, FclOutcome, FclSchedule,
    PreparedData, RoundLog, TASK_NAMES,
};

use std::sync::Mutex;

/// Things the simulation reports while it runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    LocalTrainStart { client: usize, round: usize, task: usize },
    LocalTrainEnd { client: usize, round: usize, task: usize },
    /// `reader` touched the shard owned by `owner`.
    ShardRead { reader: usize, owner: usize },
    ImportanceComputed { client: usize, task: usize },
    ReplayStored { client: usize, task: usize, stored: usize },
    Aggregated { round: usize, task: usize },
    Evaluated { round: usize, task: usize },
}

pub trait Observer: Sync {
    fn record(&self, event: Event);
}

/// Discards every event.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoopObserver;

impl Observer for NoopObserver {
    fn record(&self, _: Event) {}
}

/// Keeps every event in arrival order. Client events from one round may
/// interleave in any order since clients run concurrently.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<Event>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<Event> {
        self.events.lock().expect("event log poisoned").clone()
    }
}

impl Observer for EventLog {
    fn record(&self, event: Event) {
        self.events.lock().expect("event log poisoned").push(event);
    }
}
