use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{minibatches, Dataset, SceneSample};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Fixed-capacity sample store filled by reservoir sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    stored: Vec<SceneSample>,
    seen: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("capacity", "replay buffer capacity must be > 0"));
        }
        Ok(Self {
            capacity,
            stored: Vec::with_capacity(capacity.min(4096)),
            seen: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    pub fn seen(&self) -> usize {
        self.seen
    }

    pub fn samples(&self) -> &[SceneSample] {
        &self.stored
    }

    /// Offers each sample to the reservoir in order (Algorithm R).
    pub fn store<R: Rng + ?Sized>(&mut self, samples: &[SceneSample], rng: &mut R) {
        for s in samples {
            self.seen += 1;
            if self.stored.len() < self.capacity {
                self.stored.push(*s);
            } else {
                let j = rng.random_range(0..self.seen);
                if j < self.capacity {
                    self.stored[j] = *s;
                }
            }
        }
    }
}

/// Streams a task's samples into the buffer with a seeded reservoir.
pub fn nr_store(buffer: &mut ReplayBuffer, task_samples: &Dataset, seed: u64) {
    let mut rng = stream(seed, Purpose::ReplayStore, &[buffer.seen as u64]);
    buffer.store(&task_samples.samples, &mut rng);
}

/// Mixed minibatches for one epoch: each batch holds
/// `floor(mix_ratio * batch_size)` buffer samples drawn with replacement and
/// the rest from the epoch-shuffled new shard. The buffer share is capped at
/// `batch_size - 1` so every batch carries new data. With an empty buffer
/// (or a zero buffer share) this is exactly [`minibatches`].
pub fn nr_mixed_batches(
    buffer: &ReplayBuffer,
    new_shard: &Dataset,
    batch_size: usize,
    mix_ratio: f64,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<SceneSample>>> {
    if batch_size < 2 {
        return Err(Error::invalid("batch_size", "must be at least 2 for batch normalization"));
    }
    if !(0.0..=1.0).contains(&mix_ratio) {
        return Err(Error::invalid("mix_ratio", format!("must lie in [0, 1], got {mix_ratio}")));
    }
    let from_buffer = ((mix_ratio * batch_size as f64).floor() as usize).min(batch_size - 1);
    if buffer.is_empty() || from_buffer == 0 {
        return minibatches(new_shard, batch_size, seed, epoch);
    }
    if new_shard.is_empty() {
        return Err(Error::EmptyDataset("nr_mixed_batches new shard"));
    }
    let from_new = batch_size - from_buffer;
    let mut idx: Vec<usize> = (0..new_shard.len()).collect();
    idx.shuffle(&mut stream(seed, Purpose::Minibatch, &[epoch]));
    let mut replay_rng = stream(seed, Purpose::Replay, &[epoch]);
    let stored = buffer.samples();
    Ok(idx
        .chunks(from_new)
        .map(|chunk| {
            let mut batch: Vec<SceneSample> = chunk.iter().map(|&i| new_shard.samples[i]).collect();
            batch.extend((0..from_buffer).map(|_| stored[replay_rng.random_range(0..stored.len())]));
            batch
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_feature_names, Provenance, N_FEATURES, N_LABELS};

    fn numbered(n: usize, offset: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| SceneSample {
                features: [(i + offset) as f64; N_FEATURES],
                labels: [1.0; N_LABELS],
            })
            .collect();
        Dataset::new(samples, Provenance::Synthetic, default_feature_names())
    }

    #[test]
    fn large_capacity_keeps_everything() {
        let mut buf = ReplayBuffer::new(1000).unwrap();
        let task = numbered(375, 0);
        nr_store(&mut buf, &task, 1);
        assert_eq!(buf.len(), 375);
        assert!(buf.samples().iter().zip(&task.samples).all(|(a, b)| a.bit_eq(b)));
    }

    #[test]
    fn empty_stream_is_noop() {
        let mut buf = ReplayBuffer::new(5).unwrap();
        nr_store(&mut buf, &numbered(0, 0), 1);
        assert!(buf.is_empty());
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn reservoir_retains_uniformly() {
        let stream_ds = numbered(100, 0);
        let mut counts = [0usize; 100];
        let trials = 10_000;
        for t in 0..trials {
            let mut buf = ReplayBuffer::new(10).unwrap();
            nr_store(&mut buf, &stream_ds, t as u64);
            assert_eq!(buf.len(), 10);
            for s in buf.samples() {
                counts[s.features[0] as usize] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / trials as f64;
            assert!((freq - 0.1).abs() <= 0.02, "freq {freq}");
        }
    }

    #[test]
    fn half_mix_splits_batches_evenly() {
        let mut buf = ReplayBuffer::new(100).unwrap();
        nr_store(&mut buf, &numbered(50, 1000), 0);
        let batches = nr_mixed_batches(&buf, &numbered(64, 0), 32, 0.5, 3, 0).unwrap();
        assert_eq!(batches.len(), 4);
        for b in &batches {
            let old = b.iter().filter(|s| s.features[0] >= 1000.0).count();
            assert_eq!((old, b.len() - old), (16, 16));
        }
    }

    #[test]
    fn empty_buffer_degrades_to_minibatches() {
        let buf = ReplayBuffer::new(10).unwrap();
        let ds = numbered(37, 0);
        assert_eq!(
            nr_mixed_batches(&buf, &ds, 8, 0.5, 4, 2).unwrap(),
            minibatches(&ds, 8, 4, 2).unwrap()
        );
        assert!(nr_mixed_batches(&buf, &numbered(3, 0), 8, 0.5, 4, 2).is_err());
    }

    #[test]
    fn new_samples_covered_once_per_epoch() {
        let mut buf = ReplayBuffer::new(20).unwrap();
        nr_store(&mut buf, &numbered(20, 1000), 0);
        let ds = numbered(45, 0);
        for epoch in 0..3 {
            let batches = nr_mixed_batches(&buf, &ds, 10, 0.3, 9, epoch).unwrap();
            let mut seen = vec![0usize; 45];
            for s in batches.iter().flatten().filter(|s| s.features[0] < 1000.0) {
                seen[s.features[0] as usize] += 1;
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
