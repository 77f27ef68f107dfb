use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer state. Adam moments are allocated on the first step
/// and keep the shapes of the parameters they track.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Optimizer {
            kind,
            lr,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update in place. Fails without touching `params` if any
    /// gradient is non-finite or shapes disagree.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("optimizer gradient count", params.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim(
                    format!("optimizer parameter {i}"),
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!(
                    "gradient of parameter {i} is non-finite at optimizer step {}",
                    self.steps + 1
                )));
            }
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.values_mut().iter_mut().zip(g.values()) {
                        *pv -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
                    self.second = self.first.clone();
                } else if self.first.len() != params.len()
                    || self.first.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
                {
                    return Err(Error::dim(
                        "adam moment shapes",
                        "shapes seen on first step",
                        "different parameter set",
                    ));
                }
                let t = self.steps as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    let it = p
                        .values_mut()
                        .iter_mut()
                        .zip(g.values())
                        .zip(m.values_mut().iter_mut().zip(v.values_mut().iter_mut()));
                    for ((pv, &gv), (mv, vv)) in it {
                        *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                        let mhat = *mv / c1;
                        let vhat = *vv / c2;
                        *pv -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
