use crate::cl::ImportanceMap;
use crate::error::{Error, Result};
use crate::nn::{GradientVector, ParameterVector};

/// Parameters recorded at a task boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorParams {
    pub theta_star: ParameterVector,
    pub task_id: usize,
}

/// `sum_t (lambda/2) sum_i F_ti (theta_i - theta*_ti)^2` and its gradient.
/// BN running-statistic slots never contribute.
pub fn ewc_penalty(
    theta: &ParameterVector,
    anchors: &[AnchorParams],
    importances: &[ImportanceMap],
    lambda: f64,
) -> Result<(f64, GradientVector)> {
    if anchors.len() != importances.len() {
        return Err(Error::invalid(
            "anchors",
            format!("{} anchors but {} importance maps", anchors.len(), importances.len()),
        ));
    }
    let layout = theta.layout().clone();
    let trainable = layout.trainable_mask();
    let mut grad = GradientVector::zeros(layout.clone());
    let mut value = 0.0;
    for (anchor, imp) in anchors.iter().zip(importances) {
        theta.check_compatible(&anchor.theta_star)?;
        if imp.layout().as_ref() != layout.as_ref() {
            return Err(Error::Layout("importance map layout differs from parameters".into()));
        }
        let g = grad.values_mut();
        for i in 0..theta.len() {
            if !trainable[i] {
                continue;
            }
            let d = theta.values()[i] - anchor.theta_star.values()[i];
            let f = imp.values()[i];
            value += 0.5 * lambda * f * d * d;
            g[i] += lambda * f * d;
        }
    }
    Ok((value, grad))
}

/// FedProx proximal term `(mu/2) ||omega - omega_t||^2` over trainable slots.
pub fn fedprox_penalty(omega: &ParameterVector, omega_t: &ParameterVector, mu: f64) -> Result<(f64, GradientVector)> {
    omega.check_compatible(omega_t)?;
    if mu.is_nan() || mu < 0.0 {
        return Err(Error::invalid("mu", format!("must be >= 0, got {mu}")));
    }
    let layout = omega.layout().clone();
    let mut grad = GradientVector::zeros(layout.clone());
    let mut sq = 0.0;
    for (i, g) in grad.values_mut().iter_mut().enumerate() {
        if layout.trainable_mask()[i] {
            let d = omega.values()[i] - omega_t.values()[i];
            sq += d * d;
            *g = mu * d;
        }
    }
    Ok((0.5 * mu * sq, grad))
}
