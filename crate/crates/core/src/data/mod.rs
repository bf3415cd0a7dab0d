//! Scene samples, dataset ingestion and the deterministic splitting pipeline.

mod csv_io;
mod ops;
mod synth;

pub use csv_io::{load_csv, read_csv, write_csv};
pub use ops::{augment, minibatches, partition_clients, split_tasks, train_test_split, ClientPartition, TaskSplit};
pub use synth::{synthetic_generate, synthetic_generate_with, AffineMap, SyntheticSpec, SyntheticTruth};

use serde::{Deserialize, Serialize};

use crate::nn::Matrix;

pub const N_FEATURES: usize = 29;
pub const N_LABELS: usize = 8;

/// Feature column holding the circle (1) / arrow (0) indicator. Always
/// stored at feature index 0.
pub const TASK_FLAG_COLUMN: &str = "f_within_circle";
pub const FEATURE_PREFIX: &str = "f_";

pub const LABEL_COLUMNS: [&str; N_LABELS] = [
    "label_vacuuming",
    "label_mopping",
    "label_carry_warm_food",
    "label_carry_cold_food",
    "label_carry_drinks",
    "label_carry_small_objects",
    "label_carry_big_objects",
    "label_clean_or_converse",
];

pub const LABEL_MIN: f64 = 1.0;
pub const LABEL_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSample {
    pub features: [f64; N_FEATURES],
    pub labels: [f64; N_LABELS],
}

impl SceneSample {
    pub fn task_flag(&self) -> f64 {
        self.features[0]
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &SceneSample) -> bool {
        self.features
            .iter()
            .chain(&self.labels)
            .zip(other.features.iter().chain(&other.labels))
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
    Augmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SceneSample>,
    pub provenance: Provenance,
    /// Names of the 29 feature columns, indicator first.
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Vec<SceneSample>, provenance: Provenance, feature_names: Vec<String>) -> Self {
        Self {
            samples,
            provenance,
            feature_names,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same names and provenance, different samples.
    pub fn with_samples(&self, samples: Vec<SceneSample>) -> Dataset {
        Dataset {
            samples,
            provenance: self.provenance,
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn features(&self) -> Matrix {
        features_matrix(self.samples.iter())
    }

    pub fn labels(&self) -> Matrix {
        labels_matrix(self.samples.iter())
    }

    pub fn bit_eq(&self, other: &Dataset) -> bool {
        self.len() == other.len() && self.samples.iter().zip(&other.samples).all(|(a, b)| a.bit_eq(b))
    }
}

pub fn features_matrix<'a>(samples: impl Iterator<Item = &'a SceneSample>) -> Matrix {
    let data: Vec<f64> = samples.flat_map(|s| s.features).collect();
    Matrix::from_vec(data.len() / N_FEATURES, N_FEATURES, data).expect("fixed width")
}

pub fn labels_matrix<'a>(samples: impl Iterator<Item = &'a SceneSample>) -> Matrix {
    let data: Vec<f64> = samples.flat_map(|s| s.labels).collect();
    Matrix::from_vec(data.len() / N_LABELS, N_LABELS, data).expect("fixed width")
}

/// Default feature names for generated data: the indicator plus
/// `f_x01..f_x28`.
pub fn default_feature_names() -> Vec<String> {
    std::iter::once(TASK_FLAG_COLUMN.to_string())
        .chain((1..N_FEATURES).map(|i| format!("f_x{i:02}")))
        .collect()
}
