//! Feasibility-aware proximity terms: structural proximity from a (partial)
//! causal model, and explicit unary and monotonic constraint penalties.

mod causal;
mod constraints;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use causal::{CausalProximity, CausalProximityConfig};
pub use constraints::{
    fit_monotonic_linear, fit_sign_constrained, monotonic_penalty, unary_hinge, unary_penalty, ConstraintPenalties,
    Direction, LinearFit, MonotonicConstraint, Sign, UnaryConstraint,
};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::vae::{train_with_objective, CfVae, TrainTrace, VaeTrainConfig};

/// Constraint declaration document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFile {
    #[serde(default)]
    pub unary: Vec<UnaryConstraint>,
    #[serde(default)]
    pub monotonic: Vec<MonotonicConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub causal: Option<CausalProximityConfig>,
}

impl ConstraintFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("constraints serialize")
    }
}

/// Generator training with the proximity term replaced by structural proximity.
pub fn train_model_based(
    vae: &mut CfVae,
    classifier: &Classifier,
    rows: &[Vec<f64>],
    config: &VaeTrainConfig,
    proximity: &CausalProximity,
) -> Result<TrainTrace> {
    train_with_objective(vae, classifier, rows, config, proximity)
}

/// Generator training with l1 proximity plus weighted constraint penalties.
pub fn train_model_approx(
    vae: &mut CfVae,
    classifier: &Classifier,
    rows: &[Vec<f64>],
    config: &VaeTrainConfig,
    penalties: &ConstraintPenalties,
) -> Result<TrainTrace> {
    train_with_objective(vae, classifier, rows, config, penalties)
}
