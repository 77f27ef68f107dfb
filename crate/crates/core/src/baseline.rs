//! Per-instance counterfactual search by projected gradient descent on
//! classification loss plus a weighted distance.

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::feasibility::CausalProximity;
use crate::nn::{Tape, Tensor};
use crate::vae::{CfObjective, L1Objective};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    L1,
    Causal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceOptConfig {
    pub distance: DistanceKind,
    pub distance_weight: f64,
    pub max_iterations: usize,
    pub learning_rate: f64,
    /// Stops once the absolute loss change falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for InstanceOptConfig {
    fn default() -> Self {
        InstanceOptConfig {
            distance: DistanceKind::L1,
            distance_weight: 0.1,
            max_iterations: 200,
            learning_rate: 0.05,
            tolerance: 1e-8,
            seed: 0,
        }
    }
}

impl InstanceOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max iterations must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.distance_weight >= 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::Config("learning rate must be positive, weight and tolerance nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizedCf {
    pub cf: Vec<f64>,
    pub valid: bool,
    pub iterations: usize,
    /// Iterate index of `cf`.
    pub chosen_iteration: usize,
    /// Objective at each evaluated iterate.
    pub losses: Vec<f64>,
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

fn project(schema: &FeatureSchema, row: &mut [f64]) {
    for c in 0..schema.columns().len() {
        let (offset, width) = schema.encoded_slot(c);
        if schema.continuous_columns().contains(&c) {
            row[offset] = row[offset].clamp(0.0, 1.0);
        } else {
            project_simplex(&mut row[offset..offset + width]);
        }
    }
}

struct Eval {
    loss: f64,
    distance: f64,
    valid: bool,
    grad: Vec<f64>,
}

fn evaluate(classifier: &Classifier, objective: &dyn CfObjective, x: &[f64], cf: &[f64], target: usize, weight: f64) -> Result<Eval> {
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::row(x.to_vec()));
    let cv = tape.param(Tensor::row(cf.to_vec()));
    let scores = classifier.record_scores(&mut tape, cv)?;
    let valid = crate::data::argmax(tape.value(scores).row_slice(0)) == target;
    let p = tape.select_col(scores, target);
    let logp = tape.log(p);
    let ce = tape.scale(logp, -1.0);
    let dist = objective.distance(&mut tape, xv, cv)?;
    let distance = tape.value(dist).item();
    let weighted = tape.scale(dist, weight);
    let total = tape.add(ce, weighted);
    let loss = tape.sum(total);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok(Eval {
        loss: value,
        distance,
        valid,
        grad: grads.wrt_or_zeros(cv, [1, cf.len()]).into_values(),
    })
}

/// Searches for a counterfactual of `x` with class `target`, starting at `x`.
/// Returns the valid iterate with the smallest distance (earliest on ties),
/// else the final iterate marked invalid.
pub fn optimize_cf(
    classifier: &Classifier,
    schema: &FeatureSchema,
    x: &[f64],
    target: usize,
    config: &InstanceOptConfig,
    causal: Option<&CausalProximity>,
) -> Result<OptimizedCf> {
    config.validate()?;
    if x.len() != schema.encoded_width() {
        return Err(Error::dim("baseline input", schema.encoded_width(), x.len()));
    }
    if classifier.predict_class(x)? == target {
        return Ok(OptimizedCf {
            cf: x.to_vec(),
            valid: true,
            iterations: 0,
            chosen_iteration: 0,
            losses: Vec::new(),
        });
    }
    let objective: &dyn CfObjective = match (config.distance, causal) {
        (DistanceKind::L1, _) => &L1Objective,
        (DistanceKind::Causal, Some(c)) => c,
        (DistanceKind::Causal, None) => return Err(Error::Config("causal distance needs a causal model".into())),
    };
    let mut cf = x.to_vec();
    let mut losses = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut iterations = 0;
    loop {
        let e = evaluate(classifier, objective, x, &cf, target, config.distance_weight)?;
        if e.valid && best.as_ref().is_none_or(|(d, _, _)| e.distance < *d) {
            best = Some((e.distance, iterations, cf.clone()));
        }
        let converged = losses.last().is_some_and(|&prev: &f64| (prev - e.loss).abs() < config.tolerance);
        losses.push(e.loss);
        if converged || iterations == config.max_iterations {
            break;
        }
        for (v, g) in cf.iter_mut().zip(&e.grad) {
            *v -= config.learning_rate * g;
        }
        project(schema, &mut cf);
        iterations += 1;
        if cf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("baseline iterate non-finite at iteration {iterations}")));
        }
    }
    Ok(match best {
        Some((_, at, cf)) => OptimizedCf {
            cf,
            valid: true,
            iterations,
            chosen_iteration: at,
            losses,
        },
        None => OptimizedCf {
            cf,
            valid: false,
            iterations,
            chosen_iteration: iterations,
            losses,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.2, 0.3, 0.5];
        project_simplex(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((v[2] - 0.5).abs() < 1e-12);
        let mut w = vec![2.0, 0.0];
        project_simplex(&mut w);
        assert_eq!(w, vec![1.0, 0.0]);
        let mut u = vec![0.6, 0.6];
        project_simplex(&mut u);
        assert!((u[0] - 0.5).abs() < 1e-12 && (u[1] - 0.5).abs() < 1e-12);
    }
}
