//! Regression metrics averaged over the action targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Standard deviation below which a PCC input counts as constant.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_action_mse: Vec<f64>,
    /// Mean of `per_action_mse`; the reported loss.
    pub avg_mse: f64,
    /// `sqrt(avg_mse)`.
    pub avg_rmse: f64,
    /// Mean of per-action RMSEs, kept as a secondary column.
    pub mean_action_rmse: f64,
    /// `None` where either input column is constant.
    pub per_action_pcc: Vec<Option<f64>>,
    /// Mean over non-degenerate actions; `None` if every action is degenerate.
    pub avg_pcc: Option<f64>,
    pub degenerate_actions: Vec<usize>,
}

impl MetricsReport {
    pub fn loss(&self) -> f64 {
        self.avg_mse
    }

    /// Bitwise equality of every numeric field.
    pub fn bit_eq(&self, other: &MetricsReport) -> bool {
        fn eq(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        fn opt(a: Option<f64>, b: Option<f64>) -> bool {
            a.map(f64::to_bits) == b.map(f64::to_bits)
        }
        eq(&self.per_action_mse, &other.per_action_mse)
            && eq(
                &[self.avg_mse, self.avg_rmse, self.mean_action_rmse],
                &[other.avg_mse, other.avg_rmse, other.mean_action_rmse],
            )
            && self.per_action_pcc.len() == other.per_action_pcc.len()
            && self
                .per_action_pcc
                .iter()
                .zip(&other.per_action_pcc)
                .all(|(a, b)| opt(*a, *b))
            && opt(self.avg_pcc, other.avg_pcc)
            && self.degenerate_actions == other.degenerate_actions
    }
}

/// Pearson correlation. `Ok(None)` when either input has standard deviation
/// below [`DEGENERATE_STD`].
pub fn pcc(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::shape("pcc", x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let (sdx, sdy) = ((sxx / n as f64).sqrt(), (syy / n as f64).sqrt());
    if sdx < DEGENERATE_STD || sdy < DEGENERATE_STD {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

pub fn compute_report(pred: &Matrix, target: &Matrix) -> Result<MetricsReport> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(Error::shape(
            "compute_report",
            format!("{}x{}", target.rows(), target.cols()),
            format!("{}x{}", pred.rows(), pred.cols()),
        ));
    }
    if pred.rows() < 2 {
        return Err(Error::TooFewSamples(pred.rows()));
    }
    let (avg_mse, per_action_mse) = crate::nn::mse_loss(pred, target)?;
    let mut per_action_pcc = Vec::with_capacity(pred.cols());
    let mut degenerate_actions = Vec::new();
    for a in 0..pred.cols() {
        let p = pcc(&pred.column(a), &target.column(a))?;
        if p.is_none() {
            degenerate_actions.push(a);
        }
        per_action_pcc.push(p);
    }
    let valid: Vec<f64> = per_action_pcc.iter().flatten().copied().collect();
    let avg_pcc = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    let mean_action_rmse = per_action_mse.iter().map(|m| m.sqrt()).sum::<f64>() / per_action_mse.len() as f64;
    Ok(MetricsReport {
        avg_rmse: avg_mse.sqrt(),
        avg_mse,
        mean_action_rmse,
        per_action_mse,
        per_action_pcc,
        avg_pcc,
        degenerate_actions,
    })
}
