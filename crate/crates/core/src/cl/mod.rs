//! Continual-learning mechanisms applied locally on each client.

mod importance;
mod penalty;
mod replay;

pub use importance::{compute_fisher, ewc_online_update, mas_importance, ImportanceKind, ImportanceMap, SiAccumulator};
pub use penalty::{ewc_penalty, fedprox_penalty, AnchorParams};
pub use replay::{nr_mixed_batches, nr_store, ReplayBuffer};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClMethod {
    #[default]
    None,
    Ewc,
    #[serde(rename = "ewc_online", alias = "ewconline")]
    EwcOnline,
    Si,
    Mas,
    Nr,
}

impl ClMethod {
    pub const ALL: [ClMethod; 5] = [ClMethod::Ewc, ClMethod::EwcOnline, ClMethod::Si, ClMethod::Mas, ClMethod::Nr];

    pub fn label(self) -> &'static str {
        match self {
            ClMethod::None => "Seq",
            ClMethod::Ewc => "EWC",
            ClMethod::EwcOnline => "EWCOnline",
            ClMethod::Si => "SI",
            ClMethod::Mas => "MAS",
            ClMethod::Nr => "NR",
        }
    }

    pub fn is_penalty(self) -> bool {
        matches!(self, ClMethod::Ewc | ClMethod::EwcOnline | ClMethod::Si | ClMethod::Mas)
    }
}

/// Hyperparameters for the continual-learning mechanisms. `lambda: None`
/// selects the per-method default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    pub lambda: Option<f64>,
    pub gamma_online: f64,
    pub si_xi: f64,
    pub fisher_samples: usize,
    pub replay_capacity: usize,
    pub mix_ratio: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            gamma_online: 1.0,
            si_xi: 0.1,
            fisher_samples: 200,
            replay_capacity: 1000,
            mix_ratio: 0.5,
        }
    }
}

impl PenaltyConfig {
    pub fn lambda_for(&self, method: ClMethod) -> f64 {
        self.lambda.unwrap_or(match method {
            ClMethod::Ewc | ClMethod::EwcOnline => 100.0,
            ClMethod::Si | ClMethod::Mas => 1.0,
            ClMethod::None | ClMethod::Nr => 0.0,
        })
    }
}
