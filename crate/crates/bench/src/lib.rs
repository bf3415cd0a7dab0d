//! Shared fixtures for the criterion benchmarks in `benches/`.

use fedcl_core::data::{features_matrix, labels_matrix, SyntheticSpec};
use fedcl_core::nn::{Matrix, MlpModel};
use fedcl_core::orchestrator::{init_model, prepare_data, PreparedData};
use fedcl_core::strategy::ClientUpdate;
use fedcl_core::{DataSource, ExperimentConfig};

/// A small synthetic experiment: `n` scenes, `clients` clients, one round.
pub fn config(n: usize, clients: usize) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic(SyntheticSpec {
            n,
            seed: 0,
            noise_std: 0.1,
            task_shift: 0.0,
        }),
        clients,
        rounds: 1,
        ..ExperimentConfig::default()
    }
}

/// The initial model plus the first `batch` training rows.
pub fn batch(batch: usize) -> (MlpModel, Matrix, Matrix) {
    let cfg = config(batch.max(8) * 2, 2);
    let data: PreparedData = prepare_data(&cfg).expect("synthetic data");
    let rows = &data.train.samples[..batch];
    (init_model(&cfg), features_matrix(rows.iter()), labels_matrix(rows.iter()))
}

/// `clients` copies of the initial model, each slightly perturbed.
pub fn updates(clients: usize) -> Vec<ClientUpdate> {
    let init = init_model(&config(64, 2)).extract_params();
    (0..clients)
        .map(|c| {
            let mut params = init.clone();
            params.values_mut().iter_mut().for_each(|v| *v += c as f64 * 1e-3);
            ClientUpdate {
                client_id: c,
                params,
                n_samples: 100,
            }
        })
        .collect()
}
