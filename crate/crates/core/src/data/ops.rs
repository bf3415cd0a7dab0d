use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Provenance, SceneSample};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    pub client_id: usize,
    pub shard: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplit {
    /// Circle samples (indicator == 1).
    pub task1: Dataset,
    /// Arrow samples (indicator == 0).
    pub task2: Dataset,
}

fn shuffled_indices(n: usize, seed: u64, purpose: Purpose, coords: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, purpose, coords));
    idx
}

/// Seeded uniform shuffle, then the first `floor(ratio * n)` samples train.
pub fn train_test_split(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("train_test_split"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid("ratio", format!("must lie in (0, 1), got {ratio}")));
    }
    let idx = shuffled_indices(ds.len(), seed, Purpose::Split, &[]);
    let cut = (ratio * ds.len() as f64).floor() as usize;
    let pick = |ix: &[usize]| ds.with_samples(ix.iter().map(|&i| ds.samples[i]).collect());
    Ok((pick(&idx[..cut]), pick(&idx[cut..])))
}

/// Seeded shuffle, then contiguous shards; the remainder goes one extra
/// sample per client starting from client 0.
pub fn partition_clients(train: &Dataset, n_clients: usize, seed: u64) -> Result<Vec<ClientPartition>> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients", "must be at least 1"));
    }
    if n_clients > train.len() {
        return Err(Error::invalid(
            "n_clients",
            format!("{n_clients} clients but only {} training samples", train.len()),
        ));
    }
    let idx = shuffled_indices(train.len(), seed, Purpose::Partition, &[]);
    let base = train.len() / n_clients;
    let extra = train.len() % n_clients;
    let mut start = 0;
    Ok((0..n_clients)
        .map(|client_id| {
            let size = base + usize::from(client_id < extra);
            let shard = train.with_samples(idx[start..start + size].iter().map(|&i| train.samples[i]).collect());
            start += size;
            ClientPartition { client_id, shard }
        })
        .collect())
}

/// Splits by the indicator feature, preserving order within each task.
pub fn split_tasks(ds: &Dataset) -> Result<TaskSplit> {
    let mut task1 = Vec::new();
    let mut task2 = Vec::new();
    for (index, s) in ds.samples.iter().enumerate() {
        let value = s.task_flag();
        if value == 1.0 {
            task1.push(*s);
        } else if value == 0.0 {
            task2.push(*s);
        } else {
            return Err(Error::TaskFlag { index, value });
        }
    }
    Ok(TaskSplit {
        task1: ds.with_samples(task1),
        task2: ds.with_samples(task2),
    })
}

/// Returns the originals followed by one noisy copy of each. Gaussian noise
/// `N(0, sigma)` is added independently to every feature except the binary
/// task indicator; labels are copied bit for bit.
pub fn augment(ds: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("augment"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", format!("must be finite and >= 0, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
    let mut rng = stream(seed, Purpose::Augment, &[]);
    let mut samples = ds.samples.clone();
    samples.reserve(ds.len());
    for s in &ds.samples {
        let mut copy = *s;
        for f in copy.features.iter_mut().skip(1) {
            *f += normal.sample(&mut rng);
        }
        samples.push(copy);
    }
    Ok(Dataset {
        samples,
        provenance: Provenance::Augmented,
        feature_names: ds.feature_names.clone(),
    })
}

/// Shuffled minibatches for one epoch. The order depends only on
/// `(seed, epoch)`; a trailing batch of one sample is dropped.
pub fn minibatches(ds: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<SceneSample>>> {
    if batch_size < 2 {
        return Err(Error::invalid("batch_size", "must be at least 2 for batch normalization"));
    }
    if batch_size > ds.len() {
        return Err(Error::invalid(
            "batch_size",
            format!("{batch_size} exceeds dataset size {}", ds.len()),
        ));
    }
    let idx = shuffled_indices(ds.len(), seed, Purpose::Minibatch, &[epoch]);
    Ok(idx
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| c.iter().map(|&i| ds.samples[i]).collect())
        .collect())
}
