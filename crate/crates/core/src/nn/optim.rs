use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serializable optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerSpec::Sgd { lr }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerSpec::Sgd { lr } | OptimizerSpec::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid("lr", format!("must be finite and >= 0, got {lr}")));
        }
        if let OptimizerSpec::Adam { beta1, beta2, eps, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::invalid("adam", "need 0 <= beta < 1 and eps > 0"));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Optimizer {
        Optimizer::new(*self)
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Self {
        Self {
            spec,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            steps: 0,
        }
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.spec);
    }

    /// Applies one update in place. Slots where `mask` is false are skipped
    /// entirely (their moments stay zero).
    pub fn step_masked(&mut self, params: &mut [f64], grads: &[f64], mask: Option<&[bool]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer step", params.len(), grads.len()));
        }
        if mask.is_some_and(|m| m.len() != params.len()) {
            return Err(Error::shape("optimizer mask", params.len(), mask.unwrap().len()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let active = |i: usize| mask.is_none_or(|m| m[i]);
        self.steps += 1;
        match self.spec {
            OptimizerSpec::Sgd { lr } => {
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    if active(i) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
                if self.first_moment.len() != params.len() {
                    if self.steps != 1 {
                        return Err(Error::shape("adam state", self.first_moment.len(), params.len()));
                    }
                    self.first_moment = vec![0.0; params.len()];
                    self.second_moment = vec![0.0; params.len()];
                }
                let t = self.steps as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    if !active(i) {
                        continue;
                    }
                    let g = grads[i];
                    let m = &mut self.first_moment[i];
                    let v = &mut self.second_moment[i];
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_masked(params, grads, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_direct_formula() {
        let mut opt = OptimizerSpec::sgd(1.0).build();
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.5]).unwrap();
        assert_eq!(p, vec![1.5]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut sgd = OptimizerSpec::sgd(0.1).build();
        let mut p = vec![1.0, -2.0];
        sgd.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        let mut adam = OptimizerSpec::adam(1e-3).build();
        let mut q = vec![1.0, -2.0];
        adam.step(&mut q, &[0.0, 0.0]).unwrap();
        assert!((q[0] - 1.0).abs() <= 1e-12 && (q[1] + 2.0).abs() <= 1e-12);
    }

    /// Hand-rolled reference: minimizes f(x) = (x - 3)^2 for 3 steps.
    #[test]
    fn adam_matches_reference_on_scalar_quadratic() {
        let (lr, b1, b2, eps) = (0.1_f64, 0.9_f64, 0.999_f64, 1e-8_f64);
        let mut x_ref = 0.5_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        let mut refs = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * (x_ref - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x_ref -= lr * mh / (vh.sqrt() + eps);
            refs.push(x_ref);
        }

        let mut opt = OptimizerSpec::adam(lr).build();
        let mut x = vec![0.5];
        for r in refs {
            let g = 2.0 * (x[0] - 3.0);
            opt.step(&mut x, &[g]).unwrap();
            assert!((x[0] - r).abs() <= 1e-12);
        }
        assert_eq!(opt.steps(), 3);
    }

    #[test]
    fn nan_gradient_fails_fast() {
        let mut opt = OptimizerSpec::sgd(1.0).build();
        let mut p = vec![0.0];
        assert!(matches!(opt.step(&mut p, &[f64::NAN]), Err(Error::NonFinite(_))));
        assert_eq!(p, vec![0.0]);
    }

    #[test]
    fn length_mismatch_is_error() {
        let mut opt = OptimizerSpec::sgd(1.0).build();
        assert!(opt.step(&mut [0.0, 1.0], &[0.0]).is_err());
    }
}
