//! The fixed model that counterfactuals are generated against.

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::argmax;
use crate::error::{Error, Result};
use crate::nn::{minibatches, Activation, Mlp, MlpSpec, Optimizer, Tape, Tensor, Var};
use crate::nn::checkpoint::{load_networks, save_networks, take_network};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            hidden: 10,
            seed: 0,
        }
    }
}

/// `[d, hidden, classes]`: ReLU on the hidden layer, linear logits, softmax scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    net: Mlp,
}

impl Classifier {
    pub fn spec(input: usize, hidden: usize, classes: usize) -> Result<MlpSpec> {
        MlpSpec::new(
            vec![input, hidden, classes],
            vec![Activation::Relu, Activation::Identity],
            vec![0.0, 0.0],
        )
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.spec().output_width() < 2 {
            return Err(Error::Config("classifier needs at least two outputs".into()));
        }
        Ok(Classifier { net })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn input_width(&self) -> usize {
        self.net.spec().input_width()
    }

    pub fn num_classes(&self) -> usize {
        self.net.spec().output_width()
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.net.infer(x)
    }

    /// Row-wise class probabilities.
    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = self.logits(x)?;
        let c = out.cols();
        for row in out.values_mut().chunks_mut(c) {
            crate::nn::softmax_in_place(row);
        }
        Ok(out)
    }

    pub fn class_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.scores(&Tensor::row(x.to_vec()))?.into_values())
    }

    /// Argmax of the scores, lowest index on ties.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.class_scores(x)?))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let s = self.scores(x)?;
        Ok((0..s.rows()).map(|r| argmax(s.row_slice(r))).collect())
    }

    pub fn accuracy(&self, rows: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if rows.is_empty() {
            return Err(Error::InsufficientData("accuracy of an empty set".into()));
        }
        let pred = self.predict(&Tensor::from_rows(rows)?)?;
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / rows.len() as f64)
    }

    /// Differentiable softmax scores with the weights held constant.
    pub fn record_scores(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let logits = self.net.record_frozen(tape, input)?;
        Ok(tape.softmax(logits))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        save_networks(path, &[("classifier", &self.net)])
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Classifier::from_mlp(take_network(&mut load_networks(path)?, "classifier")?)
    }

    /// SHA-256 over the parameter bits, used to check the freeze invariant.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in self.net.params() {
            for v in p.values() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Mean cross-entropy of softmax(logits) against integer labels.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Var {
    let [n, c] = tape.value(logits).shape();
    let mut onehot = Tensor::zeros(n, c);
    for (i, &y) in labels.iter().enumerate() {
        onehot.set(i, y, 1.0);
    }
    let p = tape.softmax(logits);
    let lp = tape.log(p);
    let picked = tape.mul_const(lp, onehot);
    let total = tape.sum(picked);
    tape.scale(total, -1.0 / n as f64)
}

/// Adam on mean cross-entropy; returns the final-epoch model.
pub fn train_classifier(
    rows: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    validation: Option<(&[Vec<f64>], &[usize])>,
    config: &ClassifierConfig,
) -> Result<Classifier> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::dim("classifier training rows", rows.len(), labels.len()));
    }
    let present: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if present.len() < 2 || num_classes < 2 {
        return Err(Error::Config("classifier training needs at least two classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Config(format!("label {bad} outside {num_classes} classes")));
    }
    let d = rows[0].len();
    let mut init_rng = rng::derive(config.seed, 0);
    let mut shuffle_rng = rng::derive(config.seed, 1);
    let mut net = Mlp::init(Classifier::spec(d, config.hidden, num_classes)?, &mut init_rng)?;
    let mut opt = Optimizer::adam(config.learning_rate)?;
    let x_all = Tensor::from_rows(rows)?;
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in minibatches(rows.len(), config.batch_size, &mut shuffle_rng) {
            let mut tape = Tape::new();
            let x = tape.leaf(x_all.select_rows(&batch));
            let vars = net.record(&mut tape, x, true, &mut shuffle_rng)?;
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = cross_entropy(&mut tape, vars.output, &ys);
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Numeric(format!("classifier loss at epoch {epoch}")));
            }
            epoch_loss += lv * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let g = net.collect_grads(&vars, &grads);
            opt.step(net.params_mut(), &g)?;
        }
        let model = Classifier { net: net.clone() };
        match validation {
            Some((vx, vy)) if !vx.is_empty() => info!(
                "classifier epoch {epoch}: loss {:.5}, validation accuracy {:.4}",
                epoch_loss / rows.len() as f64,
                model.accuracy(vx, vy)?
            ),
            _ => info!("classifier epoch {epoch}: loss {:.5}", epoch_loss / rows.len() as f64),
        }
    }
    Classifier::from_mlp(net)
}
