use log::info;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::nn::{minibatches, Tape, Tensor, Var};
use crate::oracle::QuerySet;
use crate::rng;
use crate::vae::{record_cf_loss, standard_normal, CfObjective, CfVae, L1Objective, TrainTrace, VaeOptimizer, VaeTrainConfig};

/// `exp(-||a - b||^2)`.
pub fn similarity(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub base: VaeTrainConfig,
    /// Weight of the label-similarity term.
    pub oracle_weight: f64,
    /// Length scale of the similarity kernel.
    pub bandwidth: f64,
    /// Reweights labels so both classes carry equal total weight.
    pub balance_labels: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            base: VaeTrainConfig::default(),
            oracle_weight: 2350.0,
            bandwidth: 1.0,
            balance_labels: false,
        }
    }
}

/// Per-row `(o - exp(-||x_cf - x'||^2 / bandwidth^2))^2`, `[n, 1]`.
pub fn record_label_term(tape: &mut Tape, xcf: Var, candidates: &Tensor, labels: &[f64], bandwidth: f64) -> Var {
    let neg = candidates.map(|v| -v);
    let diff = tape.add_const(xcf, &neg);
    let sq = tape.square(diff);
    let d2 = tape.sum_cols(sq);
    let neg_d2 = tape.scale(d2, -1.0 / (bandwidth * bandwidth));
    let sim = tape.exp(neg_d2);
    let neg_sim = tape.scale(sim, -1.0);
    let gap = tape.add_const(neg_sim, &Tensor::column(labels.to_vec()));
    tape.square(gap)
}

impl FinetuneConfig {
    /// Narrowed kernel, balanced labels and a smaller step for Simple-BN.
    pub fn simple_bn(seed: u64) -> Self {
        FinetuneConfig {
            base: VaeTrainConfig {
                learning_rate: 1e-4,
                epochs: 100,
                seed,
                ..VaeTrainConfig::default()
            },
            oracle_weight: 2350.0,
            bandwidth: 0.1,
            balance_labels: true,
        }
    }
}

/// Records the fine-tuning objective for a batch of labeled queries and
/// returns `(mean loss, pass handles)`.
#[allow(clippy::too_many_arguments)]
pub fn record_finetune_loss<R: rand::Rng + ?Sized>(
    tape: &mut Tape,
    vae: &CfVae,
    classifier: &Classifier,
    x: &Tensor,
    candidates: &Tensor,
    targets: &[usize],
    labels: &[f64],
    weights: &[f64],
    eps: &Tensor,
    config: &FinetuneConfig,
    objective: &dyn CfObjective,
    training: bool,
    rng: &mut R,
) -> Result<(Var, crate::vae::CfPass)> {
    let l = record_cf_loss(tape, vae, classifier, x, targets, eps, &config.base, objective, training, rng)?;
    let term = record_label_term(tape, l.pass.xcf, candidates, labels, config.bandwidth);
    let w: Vec<f64> = weights.iter().map(|w| w * config.oracle_weight).collect();
    let weighted = tape.mul_const(term, Tensor::column(w));
    let rows = tape.add(l.rows, weighted);
    Ok((tape.mean(rows), l.pass))
}

/// Fine-tunes a trained generator on labeled queries: the base objective on
/// each query input plus `oracle_weight * (o - sim(x_cf, x'))^2`.
pub fn finetune(vae: &mut CfVae, classifier: &Classifier, queries: &QuerySet, config: &FinetuneConfig) -> Result<TrainTrace> {
    config.base.validate()?;
    if !vae.is_trained() {
        return Err(Error::State("fine-tuning needs a trained base generator".into()));
    }
    let labeled = queries.labeled();
    if labeled.is_empty() {
        return Err(Error::Config("fine-tuning needs at least one labeled query".into()));
    }
    if !(config.oracle_weight >= 0.0) || !(config.bandwidth > 0.0) {
        return Err(Error::Config("oracle weight must be nonnegative and bandwidth positive".into()));
    }
    let frozen = classifier.param_hash();
    let x_all = Tensor::from_rows(&labeled.iter().map(|q| q.x.clone()).collect::<Vec<_>>())?;
    let c_all = Tensor::from_rows(&labeled.iter().map(|q| q.cf.clone()).collect::<Vec<_>>())?;
    let targets: Vec<usize> = labeled.iter().map(|q| q.target).collect();
    let labels: Vec<f64> = labeled.iter().map(|q| q.label.unwrap_or(0) as f64).collect();
    let positives = labels.iter().filter(|&&o| o == 1.0).count();
    let weights: Vec<f64> = labels
        .iter()
        .map(|&o| {
            let same = if o == 1.0 { positives } else { labels.len() - positives };
            if config.balance_labels {
                labels.len() as f64 / (2.0 * same as f64)
            } else {
                1.0
            }
        })
        .collect();
    let mut shuffle = rng::derive(config.base.seed, 31);
    let mut noise = rng::derive(config.base.seed, 32);
    let mut opt = VaeOptimizer::new(config.base.optimizer, config.base.learning_rate)?;
    let mut trace = TrainTrace::default();
    for epoch in 0..config.base.epochs {
        let mut total = 0.0;
        for batch in minibatches(labeled.len(), config.base.batch_size, &mut shuffle) {
            let x = x_all.select_rows(&batch);
            let c = c_all.select_rows(&batch);
            let t: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let o: Vec<f64> = batch.iter().map(|&i| labels[i]).collect();
            let w: Vec<f64> = batch.iter().map(|&i| weights[i]).collect();
            let eps = standard_normal(batch.len(), vae.latent_dim(), &mut noise);
            let mut tape = Tape::new();
            let (loss, pass) =
                record_finetune_loss(&mut tape, vae, classifier, &x, &c, &t, &o, &w, &eps, config, &L1Objective, true, &mut noise)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("fine-tuning loss non-finite at epoch {epoch}")));
            }
            total += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            opt.step(vae, &pass, &grads)?;
        }
        let mean = total / labeled.len() as f64;
        info!("fine-tune epoch {epoch}: loss {mean:.5}");
        trace.epoch_losses.push(mean);
    }
    if classifier.param_hash() != frozen {
        return Err(Error::State("classifier parameters changed during fine-tuning".into()));
    }
    Ok(trace)
}
