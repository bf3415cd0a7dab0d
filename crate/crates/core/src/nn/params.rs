//! Flat parameter and gradient vectors plus the layout that maps them back
//! onto layers.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Linear { inputs: usize, outputs: usize },
    BatchNorm { width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TensorRole {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl TensorRole {
    pub fn is_running_stat(self) -> bool {
        matches!(self, TensorRole::RunningMean | TensorRole::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub layer: usize,
    pub role: TensorRole,
    pub range: Range<usize>,
}

/// Ordered description of every tensor in a model's flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    layers: Vec<LayerSpec>,
    slots: Vec<Slot>,
    bn_mask: Vec<bool>,
    trainable_mask: Vec<bool>,
    len: usize,
}

impl ParamLayout {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |layer: usize, role: TensorRole, n: usize| {
            slots.push(Slot {
                layer,
                role,
                range: offset..offset + n,
            });
            offset += n;
        };
        for (i, spec) in layers.iter().enumerate() {
            match *spec {
                LayerSpec::Linear { inputs, outputs } => {
                    push(i, TensorRole::Weight, inputs * outputs);
                    push(i, TensorRole::Bias, outputs);
                }
                LayerSpec::BatchNorm { width } => {
                    push(i, TensorRole::Gamma, width);
                    push(i, TensorRole::Beta, width);
                    push(i, TensorRole::RunningMean, width);
                    push(i, TensorRole::RunningVar, width);
                }
            }
        }
        let len = offset;
        let mut bn_mask = vec![false; len];
        let mut trainable_mask = vec![true; len];
        for slot in &slots {
            let is_bn = matches!(layers[slot.layer], LayerSpec::BatchNorm { .. });
            for k in slot.range.clone() {
                bn_mask[k] = is_bn;
                trainable_mask[k] = !slot.role.is_running_stat();
            }
        }
        Self {
            layers,
            slots,
            bn_mask,
            trainable_mask,
            len,
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// True for every gamma, beta, running-mean and running-variance slot.
    pub fn bn_mask(&self) -> &[bool] {
        &self.bn_mask
    }

    /// False only for running statistics, which are never differentiated.
    pub fn trainable_mask(&self) -> &[bool] {
        &self.trainable_mask
    }

    pub fn range(&self, layer: usize, role: TensorRole) -> Option<Range<usize>> {
        self.slots
            .iter()
            .find(|s| s.layer == layer && s.role == role)
            .map(|s| s.range.clone())
    }
}

fn check_layout(a: &Arc<ParamLayout>, b: &Arc<ParamLayout>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::Layout(format!(
            "lengths {} vs {} or differing tensor order",
            a.len(),
            b.len()
        )))
    }
}

/// Flat ordered view of all model parameters, including BN running stats.
#[derive(Debug, Clone)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl PartialEq for ParameterVector {
    /// Bitwise comparison of values; layouts must match.
    fn eq(&self, other: &Self) -> bool {
        check_layout(&self.layout, &other.layout).is_ok()
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layout: Arc<ParamLayout>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Layout(format!(
                "expected {} values, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros_like(other: &ParameterVector) -> Self {
        Self {
            values: vec![0.0; other.len()],
            layout: other.layout.clone(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bn_mask(&self) -> &[bool] {
        self.layout.bn_mask()
    }

    pub fn check_compatible(&self, other: &ParameterVector) -> Result<()> {
        check_layout(&self.layout, &other.layout)
    }

    /// `self - other`, slotwise.
    pub fn sub(&self, other: &ParameterVector) -> Result<ParameterVector> {
        self.check_compatible(other)?;
        Ok(ParameterVector {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            layout: self.layout.clone(),
        })
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Gradient of a scalar objective with respect to a [`ParameterVector`].
///
/// Running-statistic slots are always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl GradientVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(values: Vec<f64>, layout: Arc<ParamLayout>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Layout(format!(
                "expected {} gradient values, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Adds `other` into `self` in place.
    pub fn accumulate(&mut self, other: &GradientVector) -> Result<()> {
        check_layout(&self.layout, &other.layout)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }
}
