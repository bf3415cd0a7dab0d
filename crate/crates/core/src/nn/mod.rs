//! Minimal differentiable network core.

mod loss;
mod matrix;
mod model;
mod optim;
mod params;

pub use loss::{mse_grad, mse_loss};
pub use matrix::Matrix;
pub use model::{Activation, Architecture, MlpModel, Mode, Trace};
pub use optim::{Optimizer, OptimizerSpec};
pub use params::{GradientVector, LayerSpec, ParamLayout, ParameterVector, Slot, TensorRole};

use crate::error::{Error, Result};

impl Optimizer {
    /// Updates the trainable slots of `params`; BN running statistics are
    /// left as they are.
    pub fn step_params(&mut self, params: &mut ParameterVector, grads: &GradientVector) -> Result<()> {
        if params.layout().as_ref() != grads.layout().as_ref() {
            return Err(Error::Layout("gradient layout differs from parameters".into()));
        }
        let layout = params.layout().clone();
        self.step_masked(params.values_mut(), grads.values(), Some(layout.trainable_mask()))
    }
}
