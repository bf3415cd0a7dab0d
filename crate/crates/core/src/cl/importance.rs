//! Per-parameter importance estimates: empirical Fisher, SI path integral and
//! MAS output sensitivity.
//!
//! Fisher and MAS use per-sample gradients with BN in eval mode (running
//! statistics), since a single row has no batch variance.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{features_matrix, labels_matrix, Dataset};
use crate::error::{Error, Result};
use crate::nn::{GradientVector, Matrix, MlpModel, Mode, ParamLayout, ParameterVector};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImportanceKind {
    Fisher,
    FisherRunning,
    SiOmega,
    MasOmega,
}

/// Nonnegative per-parameter weights aligned with a parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    values: Vec<f64>,
    kind: ImportanceKind,
    layout: Arc<ParamLayout>,
}

impl ImportanceMap {
    pub fn new(values: Vec<f64>, kind: ImportanceKind, layout: Arc<ParamLayout>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Layout(format!(
                "importance map has {} values, layout {}",
                values.len(),
                layout.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite("importance map (negative or non-finite entry)"));
        }
        Ok(Self { values, kind, layout })
    }

    pub fn zeros(kind: ImportanceKind, layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            kind,
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> ImportanceKind {
        self.kind
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    fn check(&self, other: &ImportanceMap) -> Result<()> {
        if self.layout.as_ref() != other.layout.as_ref() {
            return Err(Error::Layout("importance maps use different layouts".into()));
        }
        Ok(())
    }

    /// Elementwise sum, keeping `self`'s kind.
    pub fn add(&self, other: &ImportanceMap) -> Result<ImportanceMap> {
        self.check(other)?;
        Ok(ImportanceMap {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            kind: self.kind,
            layout: self.layout.clone(),
        })
    }
}

fn sample_indices(n: usize, max_samples: usize, seed: u64, purpose: Purpose) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if max_samples < n {
        idx.shuffle(&mut stream(seed, purpose, &[]));
        idx.truncate(max_samples);
        idx.sort_unstable();
    }
    idx
}

/// Diagonal empirical Fisher: mean over up to `fisher_samples` shard rows of
/// the squared per-sample MSE gradient.
pub fn compute_fisher(model: &MlpModel, shard: &Dataset, fisher_samples: usize, seed: u64) -> Result<ImportanceMap> {
    if shard.is_empty() {
        return Err(Error::EmptyDataset("compute_fisher"));
    }
    if fisher_samples == 0 {
        return Err(Error::invalid("fisher_samples", "must be at least 1"));
    }
    let idx = sample_indices(shard.len(), fisher_samples, seed, Purpose::Fisher);
    let mut acc = vec![0.0; model.param_count()];
    for &i in &idx {
        let x = features_matrix(std::iter::once(&shard.samples[i]));
        let y = labels_matrix(std::iter::once(&shard.samples[i]));
        let (_, g, _) = model.loss_and_grad(&x, &y, Mode::Eval, None)?;
        for (a, v) in acc.iter_mut().zip(g.values()) {
            *a += v * v;
        }
    }
    let n = idx.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    ImportanceMap::new(acc, ImportanceKind::Fisher, model.layout().clone())
}

/// `running <- gamma * running + new`.
pub fn ewc_online_update(running: &ImportanceMap, new_fisher: &ImportanceMap, gamma_online: f64) -> Result<ImportanceMap> {
    running.check(new_fisher)?;
    if !(0.0..=1.0).contains(&gamma_online) {
        return Err(Error::invalid("gamma_online", format!("must lie in [0, 1], got {gamma_online}")));
    }
    ImportanceMap::new(
        running
            .values
            .iter()
            .zip(&new_fisher.values)
            .map(|(r, f)| gamma_online * r + f)
            .collect(),
        ImportanceKind::FisherRunning,
        running.layout.clone(),
    )
}

/// MAS importance: mean over up to `max_samples` rows of
/// `|d ||f(x)||^2 / d theta|`. Only features are read.
pub fn mas_importance(model: &MlpModel, features: &Matrix, max_samples: usize, seed: u64) -> Result<ImportanceMap> {
    if features.rows() == 0 {
        return Err(Error::EmptyDataset("mas_importance"));
    }
    if max_samples == 0 {
        return Err(Error::invalid("max_samples", "must be at least 1"));
    }
    let idx = sample_indices(features.rows(), max_samples, seed, Purpose::Mas);
    let mut acc = vec![0.0; model.param_count()];
    for &i in &idx {
        let x = Matrix::from_vec(1, features.cols(), features.row(i).to_vec())?;
        let trace = model.trace(&x, Mode::Eval)?;
        let dout = Matrix::from_vec(
            1,
            trace.output().cols(),
            trace.output().as_slice().iter().map(|f| 2.0 * f).collect(),
        )?;
        let g = model.backward_trace(&trace, &dout)?;
        for (a, v) in acc.iter_mut().zip(g.values()) {
            *a += v.abs();
        }
    }
    let n = idx.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    ImportanceMap::new(acc, ImportanceKind::MasOmega, model.layout().clone())
}

/// Path-integral accumulator for synaptic intelligence.
#[derive(Debug, Clone)]
pub struct SiAccumulator {
    omega_running: Vec<f64>,
    theta_start: ParameterVector,
    xi: f64,
}

impl SiAccumulator {
    pub fn new(theta_start: ParameterVector, xi: f64) -> Result<Self> {
        if xi.is_nan() || xi <= 0.0 {
            return Err(Error::invalid("xi", "damping must be > 0"));
        }
        Ok(Self {
            omega_running: vec![0.0; theta_start.len()],
            theta_start,
            xi,
        })
    }

    pub fn omega_running(&self) -> &[f64] {
        &self.omega_running
    }

    pub fn theta_start(&self) -> &ParameterVector {
        &self.theta_start
    }

    /// Restarts the path integral from `theta`.
    pub fn restart(&mut self, theta: ParameterVector) {
        self.omega_running.iter_mut().for_each(|w| *w = 0.0);
        self.theta_start = theta;
    }

    /// `w_i += -g_i * delta_i` for one optimizer step; `grad` is the gradient
    /// used by that step and `delta` the resulting parameter change.
    pub fn accumulate(&mut self, grad: &GradientVector, delta: &[f64]) -> Result<()> {
        if grad.len() != self.omega_running.len() || delta.len() != self.omega_running.len() {
            return Err(Error::shape("si_accumulate", self.omega_running.len(), delta.len()));
        }
        for ((w, g), d) in self.omega_running.iter_mut().zip(grad.values()).zip(delta) {
            *w += -g * d;
        }
        Ok(())
    }

    /// `Omega_i = max(0, w_i) / ((theta_end_i - theta_start_i)^2 + xi)`, then
    /// restarts from `theta_end`.
    pub fn consolidate(&mut self, theta_end: &ParameterVector) -> Result<ImportanceMap> {
        self.theta_start.check_compatible(theta_end)?;
        let layout = theta_end.layout().clone();
        let omega = self
            .omega_running
            .iter()
            .zip(theta_end.values().iter().zip(self.theta_start.values()))
            .zip(layout.trainable_mask())
            .map(|((w, (end, start)), trainable)| {
                if *trainable {
                    let d = end - start;
                    w.max(0.0) / (d * d + self.xi)
                } else {
                    0.0
                }
            })
            .collect();
        self.restart(theta_end.clone());
        ImportanceMap::new(omega, ImportanceKind::SiOmega, layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_generate, SceneSample};
    use crate::nn::{Architecture, LayerSpec, OptimizerSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> MlpModel {
        MlpModel::init(Architecture::default(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn fisher_vanishes_at_exact_fit() {
        let m = model(1);
        let (mut ds, _) = synthetic_generate(30, 2, 0.0).unwrap();
        let pred = m.predict(&ds.features()).unwrap();
        for (r, s) in ds.samples.iter_mut().enumerate() {
            s.labels.copy_from_slice(pred.row(r));
        }
        let f = compute_fisher(&m, &ds, 100, 3).unwrap();
        assert!(f.max() <= 1e-10);
    }

    #[test]
    fn fisher_is_nonnegative() {
        let (ds, _) = synthetic_generate(20, 5, 0.1).unwrap();
        for seed in 0..50 {
            let f = compute_fisher(&model(seed), &ds, 8, seed).unwrap();
            assert!(f.values().iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn single_sample_fisher_is_squared_gradient() {
        let m = model(4);
        let (ds, _) = synthetic_generate(1, 6, 0.1).unwrap();
        let f = compute_fisher(&m, &ds, 10, 0).unwrap();
        let (_, g, _) = m.loss_and_grad(&ds.features(), &ds.labels(), Mode::Eval, None).unwrap();
        for (fv, gv) in f.values().iter().zip(g.values()) {
            assert!((fv - gv * gv).abs() <= 1e-12);
        }
    }

    #[test]
    fn online_update_rules() {
        let layout = Architecture::default().layout();
        let (ds, _) = synthetic_generate(10, 1, 0.1).unwrap();
        let f1 = compute_fisher(&model(1), &ds, 10, 0).unwrap();
        let f2 = compute_fisher(&model(2), &ds, 10, 0).unwrap();
        let zero = ImportanceMap::zeros(ImportanceKind::FisherRunning, layout);

        let r1 = ewc_online_update(&zero, &f1, 1.0).unwrap();
        assert_eq!(r1.values(), f1.values());
        let r2 = ewc_online_update(&r1, &f2, 1.0).unwrap();
        for ((r, a), b) in r2.values().iter().zip(f1.values()).zip(f2.values()) {
            assert!((r - (a + b)).abs() <= 1e-12);
        }
        let r0 = ewc_online_update(&r2, &f1, 0.0).unwrap();
        assert_eq!(r0.values(), f1.values());
    }

    #[test]
    fn mas_zero_output_layer() {
        let mut m = model(3);
        let w = m.layout().range(4, crate::nn::TensorRole::Weight).unwrap();
        let b = m.layout().range(4, crate::nn::TensorRole::Bias).unwrap();
        m.params_mut()[w.clone()].fill(0.0);
        m.params_mut()[b].fill(0.0);
        let (ds, _) = synthetic_generate(15, 2, 0.1).unwrap();
        let omega = mas_importance(&m, &ds.features(), 100, 0).unwrap();
        assert!(omega.values()[w].iter().all(|v| *v == 0.0));
        assert!(omega.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn mas_single_sample_matches_finite_differences() {
        let m = model(8);
        let (ds, _) = synthetic_generate(1, 3, 0.1).unwrap();
        let x = ds.features();
        let omega = mas_importance(&m, &x, 1, 0).unwrap();
        let norm = |mm: &MlpModel| mm.predict(&x).unwrap().as_slice().iter().map(|v| v * v).sum::<f64>();
        let h = 1e-5;
        for k in (0..m.param_count()).step_by(7) {
            if !m.layout().trainable_mask()[k] {
                continue;
            }
            let mut plus = m.clone();
            plus.params_mut()[k] += h;
            let mut minus = m.clone();
            minus.params_mut()[k] -= h;
            let fd = ((norm(&plus) - norm(&minus)) / (2.0 * h)).abs();
            assert!((omega.values()[k] - fd).abs() <= 1e-6, "slot {k}");
        }
    }

    fn tiny_layout() -> Arc<ParamLayout> {
        Arc::new(ParamLayout::new(vec![LayerSpec::Linear { inputs: 1, outputs: 1 }]))
    }

    #[test]
    fn si_zero_gradient_leaves_accumulator() {
        let layout = tiny_layout();
        let theta = ParameterVector::new(vec![1.0, 2.0], layout.clone()).unwrap();
        let mut acc = SiAccumulator::new(theta, 0.1).unwrap();
        acc.accumulate(&GradientVector::zeros(layout), &[0.3, -0.2]).unwrap();
        assert_eq!(acc.omega_running(), &[0.0, 0.0]);
    }

    #[test]
    fn si_sgd_step_gains_lr_g_squared() {
        let layout = tiny_layout();
        let mut theta = vec![1.0, 2.0];
        let mut acc = SiAccumulator::new(ParameterVector::new(theta.clone(), layout.clone()).unwrap(), 0.1).unwrap();
        let g = GradientVector::from_values(vec![0.5, -3.0], layout).unwrap();
        let before = theta.clone();
        let lr = 0.1;
        let mut opt = OptimizerSpec::sgd(lr).build();
        opt.step(&mut theta, g.values()).unwrap();
        let delta: Vec<f64> = theta.iter().zip(&before).map(|(a, b)| a - b).collect();
        acc.accumulate(&g, &delta).unwrap();
        for (w, gv) in acc.omega_running().iter().zip(g.values()) {
            assert!((w - lr * gv * gv).abs() <= 1e-15);
            assert!(*w >= 0.0);
        }
    }

    #[test]
    fn si_consolidate_direct_formula() {
        let layout = tiny_layout();
        let start = ParameterVector::new(vec![0.0, 0.0], layout.clone()).unwrap();
        let mut acc = SiAccumulator::new(start.clone(), 0.1).unwrap();
        // w = [1, -1] via -g*delta
        let g = GradientVector::from_values(vec![-1.0, 1.0], layout.clone()).unwrap();
        acc.accumulate(&g, &[1.0, 1.0]).unwrap();
        let end = ParameterVector::new(vec![1.0, 1.0], layout).unwrap();
        let omega = acc.consolidate(&end).unwrap();
        assert!((omega.values()[0] - 1.0 / 1.1).abs() <= 1e-15);
        assert_eq!(omega.values()[1], 0.0);
        assert_eq!(acc.omega_running(), &[0.0, 0.0]);
        assert_eq!(acc.theta_start(), &end);

        let mut fresh = SiAccumulator::new(start.clone(), 0.1).unwrap();
        assert!(fresh.consolidate(&start).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_inputs_are_errors() {
        let m = model(1);
        let empty = Dataset::new(Vec::<SceneSample>::new(), crate::data::Provenance::Synthetic, vec![]);
        assert!(compute_fisher(&m, &empty, 10, 0).is_err());
        assert!(mas_importance(&m, &Matrix::zeros(0, 29), 10, 0).is_err());
    }
}
