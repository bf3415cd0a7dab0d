//! Fixed-topology MLP with batch normalization and hand-derived gradients.
//!
//! Parameters live in one flat vector described by a [`ParamLayout`]; layers
//! read their tensors as slices of it. Hidden blocks are
//! `Linear -> BatchNorm -> activation`, followed by a final `Linear`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::{mse_grad, mse_loss};
use crate::nn::params::{GradientVector, LayerSpec, ParamLayout, ParameterVector, TensorRole};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub activation: Activation,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for Architecture {
    /// 29 -> 16 -> BN -> 16 -> BN -> 8, identity activations.
    fn default() -> Self {
        Self {
            inputs: crate::data::N_FEATURES,
            hidden: vec![16, 16],
            outputs: crate::data::N_LABELS,
            activation: Activation::Identity,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        }
    }
}

impl Architecture {
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut width = self.inputs;
        for &h in &self.hidden {
            specs.push(LayerSpec::Linear {
                inputs: width,
                outputs: h,
            });
            specs.push(LayerSpec::BatchNorm { width: h });
            width = h;
        }
        specs.push(LayerSpec::Linear {
            inputs: width,
            outputs: self.outputs,
        });
        specs
    }

    pub fn layout(&self) -> Arc<ParamLayout> {
        Arc::new(ParamLayout::new(self.layer_specs()))
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Linear {
        input: Matrix,
    },
    BatchNorm {
        xhat: Matrix,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        mode: Mode,
    },
    Relu {
        pre: Matrix,
    },
}

/// Intermediate values of one forward pass, needed for the backward pass and
/// for committing BN running statistics.
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<(usize, Cache)>,
    output: Matrix,
    mode: Mode,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    arch: Architecture,
    layout: Arc<ParamLayout>,
    params: Vec<f64>,
}

impl MlpModel {
    /// Linear weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`;
    /// BN gamma 1, beta 0, running mean 0, running variance 1.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut model = Self::zeroed(arch);
        let layout = model.layout.clone();
        for slot in layout.slots() {
            if let LayerSpec::Linear { inputs, .. } = layout.layers()[slot.layer] {
                let bound = 1.0 / (inputs as f64).sqrt();
                for v in &mut model.params[slot.range.clone()] {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        model
    }

    /// All linear weights and biases zero, BN at identity.
    pub fn zeroed(arch: Architecture) -> Self {
        let layout = arch.layout();
        let mut params = vec![0.0; layout.len()];
        for slot in layout.slots() {
            if matches!(slot.role, TensorRole::Gamma | TensorRole::RunningVar) {
                params[slot.range.clone()].fill(1.0);
            }
        }
        Self {
            arch,
            layout,
            params,
        }
    }

    pub fn from_params(arch: Architecture, params: &ParameterVector) -> Result<Self> {
        let mut model = Self::zeroed(arch);
        model.inject_params(params)?;
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn extract_params(&self) -> ParameterVector {
        ParameterVector::new(self.params.clone(), self.layout.clone())
            .expect("model params always match their layout")
    }

    pub fn inject_params(&mut self, params: &ParameterVector) -> Result<()> {
        self.check_params(params)?;
        self.params.copy_from_slice(params.values());
        Ok(())
    }

    /// Copies only the slots where `keep_local` is false.
    pub fn inject_params_except(
        &mut self,
        params: &ParameterVector,
        keep_local: &[bool],
    ) -> Result<()> {
        self.check_params(params)?;
        if keep_local.len() != self.params.len() {
            return Err(Error::Layout("mask length differs from parameter count".into()));
        }
        for ((dst, src), keep) in self.params.iter_mut().zip(params.values()).zip(keep_local) {
            if !keep {
                *dst = *src;
            }
        }
        Ok(())
    }

    fn check_params(&self, params: &ParameterVector) -> Result<()> {
        if params.layout().as_ref() != self.layout.as_ref() {
            return Err(Error::Layout(format!(
                "model expects {} parameters in its own layout, got {}",
                self.layout.len(),
                params.len()
            )));
        }
        Ok(())
    }

    fn tensor(&self, layer: usize, role: TensorRole) -> &[f64] {
        let r = self.layout.range(layer, role).expect("tensor in layout");
        &self.params[r]
    }

    /// Forward pass. In train mode BN normalizes with batch statistics and the
    /// running statistics are updated; in eval mode only running statistics
    /// are read.
    pub fn forward(&mut self, batch: &Matrix, mode: Mode) -> Result<Matrix> {
        let trace = self.trace(batch, mode)?;
        self.commit_running_stats(&trace);
        Ok(trace.output)
    }

    /// Eval-mode forward that leaves the model untouched.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.trace(batch, Mode::Eval)?.output)
    }

    /// Pure forward pass recording everything needed by [`Self::backward_trace`].
    pub fn trace(&self, batch: &Matrix, mode: Mode) -> Result<Trace> {
        if batch.cols() != self.arch.inputs {
            return Err(Error::shape("forward input columns", self.arch.inputs, batch.cols()));
        }
        if batch.rows() == 0 {
            return Err(Error::EmptyDataset("forward batch"));
        }
        if mode == Mode::Train && batch.rows() < 2 {
            return Err(Error::BatchTooSmall(batch.rows()));
        }

        let mut caches = Vec::with_capacity(self.layout.layers().len() * 2);
        let mut x = batch.clone();
        for (i, spec) in self.layout.layers().iter().enumerate() {
            match *spec {
                LayerSpec::Linear { inputs, outputs } => {
                    let y = linear_forward(
                        &x,
                        self.tensor(i, TensorRole::Weight),
                        self.tensor(i, TensorRole::Bias),
                        inputs,
                        outputs,
                    );
                    caches.push((i, Cache::Linear { input: x }));
                    x = y;
                }
                LayerSpec::BatchNorm { width } => {
                    let (y, cache) = self.batchnorm_forward(i, width, &x, mode);
                    caches.push((i, cache));
                    x = y;
                    if self.arch.activation == Activation::Relu {
                        let pre = x.clone();
                        for v in x.as_mut_slice() {
                            *v = v.max(0.0);
                        }
                        caches.push((i, Cache::Relu { pre }));
                    }
                }
            }
        }
        Ok(Trace {
            caches,
            output: x,
            mode,
        })
    }

    fn batchnorm_forward(&self, layer: usize, width: usize, x: &Matrix, mode: Mode) -> (Matrix, Cache) {
        let gamma = self.tensor(layer, TensorRole::Gamma);
        let beta = self.tensor(layer, TensorRole::Beta);
        let eps = self.arch.bn_epsilon;
        let rows = x.rows();

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; width];
                for r in 0..rows {
                    for (m, v) in mean.iter_mut().zip(x.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; width];
                for r in 0..rows {
                    for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        let d = v - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                (mean, var)
            }
            Mode::Eval => (
                self.tensor(layer, TensorRole::RunningMean).to_vec(),
                self.tensor(layer, TensorRole::RunningVar).to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let mut xhat = Matrix::zeros(rows, width);
        let mut y = Matrix::zeros(rows, width);
        for r in 0..rows {
            let xr = x.row(r);
            let hr = xhat.row_mut(r);
            for j in 0..width {
                hr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let hr = xhat.row(r).to_vec();
            let yr = y.row_mut(r);
            for j in 0..width {
                yr[j] = gamma[j] * hr[j] + beta[j];
            }
        }
        (
            y,
            Cache::BatchNorm {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                mode,
            },
        )
    }

    /// Updates BN running statistics from a train-mode trace. Running
    /// variance uses the unbiased batch variance.
    pub fn commit_running_stats(&mut self, trace: &Trace) {
        if trace.mode != Mode::Train {
            return;
        }
        let m = self.arch.bn_momentum;
        for (layer, cache) in &trace.caches {
            if let Cache::BatchNorm {
                batch_mean,
                batch_var,
                xhat,
                ..
            } = cache
            {
                let n = xhat.rows() as f64;
                let rm = self.layout.range(*layer, TensorRole::RunningMean).unwrap();
                let rv = self.layout.range(*layer, TensorRole::RunningVar).unwrap();
                for (p, bm) in self.params[rm].iter_mut().zip(batch_mean) {
                    *p = (1.0 - m) * *p + m * bm;
                }
                for (p, bv) in self.params[rv].iter_mut().zip(batch_var) {
                    *p = (1.0 - m) * *p + m * bv * n / (n - 1.0);
                }
            }
        }
    }

    /// Reverse-mode gradient of a scalar objective given its gradient with
    /// respect to the network output.
    pub fn backward_trace(&self, trace: &Trace, output_grad: &Matrix) -> Result<GradientVector> {
        if output_grad.rows() != trace.output.rows() || output_grad.cols() != trace.output.cols() {
            return Err(Error::shape(
                "backward output gradient",
                format!("{}x{}", trace.output.rows(), trace.output.cols()),
                format!("{}x{}", output_grad.rows(), output_grad.cols()),
            ));
        }
        let mut grad = GradientVector::zeros(self.layout.clone());
        let mut dy = output_grad.clone();
        for (idx, (layer, cache)) in trace.caches.iter().enumerate().rev() {
            let need_input_grad = idx > 0;
            match cache {
                Cache::Linear { input } => {
                    let LayerSpec::Linear { inputs, outputs } = self.layout.layers()[*layer] else {
                        unreachable!("linear cache on non-linear layer");
                    };
                    let wr = self.layout.range(*layer, TensorRole::Weight).unwrap();
                    let br = self.layout.range(*layer, TensorRole::Bias).unwrap();
                    let g = grad.values_mut();
                    for r in 0..input.rows() {
                        let xr = input.row(r);
                        let dr = dy.row(r);
                        for o in 0..outputs {
                            let d = dr[o];
                            g[br.start + o] += d;
                            let row = &mut g[wr.start + o * inputs..wr.start + (o + 1) * inputs];
                            for (gw, xv) in row.iter_mut().zip(xr) {
                                *gw += d * xv;
                            }
                        }
                    }
                    if need_input_grad {
                        let w = &self.params[wr];
                        let mut dx = Matrix::zeros(input.rows(), inputs);
                        for r in 0..input.rows() {
                            let dr = dy.row(r).to_vec();
                            let xr = dx.row_mut(r);
                            for (o, d) in dr.iter().enumerate() {
                                for (xv, wv) in xr.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
                                    *xv += d * wv;
                                }
                            }
                        }
                        dy = dx;
                    }
                }
                Cache::Relu { pre } => {
                    for (d, p) in dy.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                        if *p <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    mode,
                    ..
                } => {
                    let gr = self.layout.range(*layer, TensorRole::Gamma).unwrap();
                    let br = self.layout.range(*layer, TensorRole::Beta).unwrap();
                    let gamma = &self.params[gr.clone()];
                    let width = gamma.len();
                    let rows = xhat.rows();
                    let mut dgamma = vec![0.0; width];
                    let mut dbeta = vec![0.0; width];
                    for r in 0..rows {
                        for j in 0..width {
                            dgamma[j] += dy.get(r, j) * xhat.get(r, j);
                            dbeta[j] += dy.get(r, j);
                        }
                    }
                    let g = grad.values_mut();
                    for j in 0..width {
                        g[gr.start + j] += dgamma[j];
                        g[br.start + j] += dbeta[j];
                    }
                    let mut dx = Matrix::zeros(rows, width);
                    match mode {
                        Mode::Train => {
                            // dx = inv_std/B * (B*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)),
                            // with dxhat = dy*gamma, so the sums are gamma*dbeta, gamma*dgamma.
                            let n = rows as f64;
                            for r in 0..rows {
                                let out = dx.row_mut(r);
                                for j in 0..width {
                                    let dxhat = dy.get(r, j) * gamma[j];
                                    out[j] = inv_std[j] / n
                                        * (n * dxhat
                                            - gamma[j] * dbeta[j]
                                            - xhat.get(r, j) * gamma[j] * dgamma[j]);
                                }
                            }
                        }
                        Mode::Eval => {
                            for r in 0..rows {
                                let out = dx.row_mut(r);
                                for j in 0..width {
                                    out[j] = dy.get(r, j) * gamma[j] * inv_std[j];
                                }
                            }
                        }
                    }
                    dy = dx;
                }
            }
        }
        Ok(grad)
    }

    /// MSE loss and its exact gradient, plus an optional penalty gradient
    /// added slotwise. Returns the loss (penalty excluded) and the trace so
    /// the caller can commit running statistics.
    pub fn loss_and_grad(
        &self,
        batch: &Matrix,
        target: &Matrix,
        mode: Mode,
        extra_penalty_grad: Option<&GradientVector>,
    ) -> Result<(f64, GradientVector, Trace)> {
        let trace = self.trace(batch, mode)?;
        let (loss, _) = mse_loss(&trace.output, target)?;
        let dout = mse_grad(&trace.output, target)?;
        let mut grad = self.backward_trace(&trace, &dout)?;
        if let Some(extra) = extra_penalty_grad {
            grad.accumulate(extra)?;
        }
        Ok((loss, grad, trace))
    }

    /// Gradient of train-mode MSE (plus optional penalty gradient).
    pub fn backward(
        &self,
        batch: &Matrix,
        target: &Matrix,
        extra_penalty_grad: Option<&GradientVector>,
    ) -> Result<GradientVector> {
        Ok(self
            .loss_and_grad(batch, target, Mode::Train, extra_penalty_grad)?
            .1)
    }
}

fn linear_forward(x: &Matrix, w: &[f64], b: &[f64], inputs: usize, outputs: usize) -> Matrix {
    let mut y = Matrix::zeros(x.rows(), outputs);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let yr = y.row_mut(r);
        for o in 0..outputs {
            let wo = &w[o * inputs..(o + 1) * inputs];
            let dot: f64 = wo.iter().zip(xr).map(|(a, b)| a * b).sum();
            yr[o] = dot + b[o];
        }
    }
    y
}
