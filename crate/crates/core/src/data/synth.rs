//! Synthetic scene data with a known affine ground truth.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{default_feature_names, Dataset, Provenance, SceneSample, LABEL_MAX, LABEL_MIN, N_FEATURES, N_LABELS};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// `labels = weights * features + bias`, weights row-major `8 x 29`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub weights: Vec<f64>,
    pub bias: [f64; N_LABELS],
}

impl AffineMap {
    pub fn apply(&self, features: &[f64; N_FEATURES]) -> [f64; N_LABELS] {
        let mut out = self.bias;
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.weights[j * N_FEATURES..(j + 1) * N_FEATURES];
            *o += row.iter().zip(features).map(|(a, x)| a * x).sum::<f64>();
        }
        out
    }

    pub fn weight(&self, label: usize, feature: usize) -> f64 {
        self.weights[label * N_FEATURES + feature]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub seed: u64,
    pub noise_std: f64,
    /// Scale of the extra weight perturbation applied to arrow (indicator 0)
    /// samples. Zero gives a single shared map.
    #[serde(default)]
    pub task_shift: f64,
}

/// Ground truth maps for circle and arrow samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub circle: AffineMap,
    pub arrow: AffineMap,
}

/// Features `U(0,1)` except the fair-coin indicator at index 0; labels are
/// `clip(A x + b + noise, 1, 5)` with `b` centring the mean label near 3.
pub fn synthetic_generate(n: usize, seed: u64, noise_std: f64) -> Result<(Dataset, AffineMap)> {
    let (ds, truth) = synthetic_generate_with(&SyntheticSpec {
        n,
        seed,
        noise_std,
        task_shift: 0.0,
    })?;
    Ok((ds, truth.circle))
}

pub fn synthetic_generate_with(spec: &SyntheticSpec) -> Result<(Dataset, SyntheticTruth)> {
    if spec.n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::invalid("noise_std", "must be finite and >= 0"));
    }
    let mut rng = stream(spec.seed, Purpose::Synthetic, &[]);
    let base: Vec<f64> = (0..N_LABELS * N_FEATURES)
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    let shifted: Vec<f64> = base
        .iter()
        .map(|w| w + spec.task_shift * rng.random_range(-1.0..1.0))
        .collect();
    let circle = centred_map(base);
    let arrow = centred_map(shifted);

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid("noise_std", e.to_string()))?;
    let samples = (0..spec.n)
        .map(|_| {
            let mut features = [0.0; N_FEATURES];
            features[0] = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            for f in features.iter_mut().skip(1) {
                *f = rng.random::<f64>();
            }
            let map = if features[0] == 1.0 { &circle } else { &arrow };
            let mut labels = map.apply(&features);
            for l in &mut labels {
                *l = (*l + noise.sample(&mut rng)).clamp(LABEL_MIN, LABEL_MAX);
            }
            SceneSample { features, labels }
        })
        .collect();
    Ok((
        Dataset::new(samples, Provenance::Synthetic, default_feature_names()),
        SyntheticTruth { circle, arrow },
    ))
}

/// Sets the bias so the label mean is 3 at the feature mean (all 0.5).
fn centred_map(weights: Vec<f64>) -> AffineMap {
    let mut bias = [0.0; N_LABELS];
    for (j, b) in bias.iter_mut().enumerate() {
        let row = &weights[j * N_FEATURES..(j + 1) * N_FEATURES];
        let mean: f64 = row.iter().map(|w| w * 0.5).sum();
        *b = 3.0 - mean;
    }
    AffineMap { weights, bias }
}
