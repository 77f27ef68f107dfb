//! Class-conditioned variational counterfactual generator.
//!
//! The encoder maps `(x, y')` to a diagonal Gaussian over a latent code; the
//! decoder maps `(z, y')` back to feature space. Training minimises the
//! per-row objective `dist(x, x_cf) + lambda * hinge(h(x_cf), y') + KL`,
//! averaged over the batch, against a frozen classifier `h`.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::nn::{minibatches, Activation, Mlp, MlpSpec, Optimizer, OptimizerKind, Tape, Tensor, Var};
use crate::nn::checkpoint::{load_networks, save_networks, take_network};
use crate::rng;

pub const LATENT_DIM: usize = 10;
pub const HIDDEN: [usize; 4] = [20, 16, 14, 12];
pub const DROPOUT: f64 = 0.1;

fn prior_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".prior.json");
    path.with_file_name(name)
}

/// Per-class Gaussian prior over the latent code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPrior {
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

impl LatentPrior {
    pub fn standard(classes: usize, dim: usize) -> Self {
        LatentPrior {
            means: vec![vec![0.0; dim]; classes],
            stds: vec![vec![1.0; dim]; classes],
        }
    }

    pub fn validate(&self, classes: usize, dim: usize) -> Result<()> {
        if self.means.len() != classes || self.stds.len() != classes {
            return Err(Error::dim("prior classes", classes, self.means.len()));
        }
        for (m, s) in self.means.iter().zip(&self.stds) {
            if m.len() != dim || s.len() != dim {
                return Err(Error::dim("prior dimension", dim, m.len()));
            }
            if s.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Config("prior std entries must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub validity_weight: f64,
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub samples_per_input: usize,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            validity_weight: 150.0,
            margin: 0.15,
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Sgd,
            samples_per_input: 1,
            seed: 0,
        }
    }
}

impl VaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validity_weight > 0.0) {
            return Err(Error::Config("validity weight must be positive".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("hinge margin must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.samples_per_input == 0 {
            return Err(Error::Config("batch size and samples per input must be positive".into()));
        }
        Ok(())
    }
}

/// The target class a counterfactual should reach: the next class index,
/// which for binary problems is `1 - h(x)`.
pub fn flip_target(predicted: usize, classes: usize) -> usize {
    (predicted + 1) % classes
}

#[derive(Clone, Debug, PartialEq)]
pub struct CfVae {
    pub encoder_mean: Mlp,
    pub encoder_std: Mlp,
    pub decoder: Mlp,
    pub prior: LatentPrior,
    pub classes: usize,
    trained: bool,
}

/// Handles for one recorded generator pass.
pub struct CfPass {
    pub x: Var,
    pub mean: Var,
    pub std: Var,
    pub z: Var,
    pub xcf: Var,
    pub params: Vec<Var>,
}

impl CfVae {
    pub fn specs(features: usize) -> Result<[MlpSpec; 3]> {
        let enc = |out: Activation| {
            let mut widths = vec![features + 1];
            widths.extend(HIDDEN);
            widths.push(LATENT_DIM);
            MlpSpec::uniform(widths, Activation::Relu, out, DROPOUT)
        };
        let mut dec = vec![LATENT_DIM + 1];
        dec.extend(HIDDEN.iter().rev());
        dec.push(features);
        Ok([
            enc(Activation::Identity)?,
            enc(Activation::Sigmoid)?,
            MlpSpec::uniform(dec, Activation::Relu, Activation::Sigmoid, DROPOUT)?,
        ])
    }

    pub fn init(features: usize, classes: usize, seed: u64) -> Result<Self> {
        let [m, s, d] = Self::specs(features)?;
        let mut r = rng::derive(seed, 10);
        Ok(CfVae {
            encoder_mean: Mlp::init(m, &mut r)?,
            encoder_std: Mlp::init(s, &mut r)?,
            decoder: Mlp::init(d, &mut r)?,
            prior: LatentPrior::standard(classes, LATENT_DIM),
            classes,
            trained: false,
        })
    }

    /// Assembles a generator from stored networks; it counts as trained.
    pub fn from_networks(encoder_mean: Mlp, encoder_std: Mlp, decoder: Mlp, prior: LatentPrior) -> Result<Self> {
        let d = decoder.spec().output_width();
        let l = encoder_mean.spec().output_width();
        if encoder_mean.spec().input_width() != d + 1 || encoder_std.spec().input_width() != d + 1 {
            return Err(Error::dim("encoder input width", d + 1, encoder_mean.spec().input_width()));
        }
        if encoder_std.spec().output_width() != l || decoder.spec().input_width() != l + 1 {
            return Err(Error::dim("latent width", l, encoder_std.spec().output_width()));
        }
        let classes = prior.means.len();
        prior.validate(classes, l)?;
        Ok(CfVae {
            encoder_mean,
            encoder_std,
            decoder,
            prior,
            classes,
            trained: true,
        })
    }

    pub fn features(&self) -> usize {
        self.decoder.spec().output_width()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder_mean.spec().output_width()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    fn nets_mut(&mut self) -> [&mut Mlp; 3] {
        [&mut self.encoder_mean, &mut self.encoder_std, &mut self.decoder]
    }

    /// Mean and std of `q(z | x, y')`, evaluation mode.
    pub fn encode(&self, x: &[f64], target: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let input = with_class(&Tensor::row(x.to_vec()), &[target], self.features())?;
        Ok((
            self.encoder_mean.infer(&input)?.into_values(),
            self.encoder_std.infer(&input)?.into_values(),
        ))
    }

    pub fn decode(&self, z: &[f64], target: usize) -> Result<Vec<f64>> {
        let input = with_class(&Tensor::row(z.to_vec()), &[target], self.latent_dim())?;
        Ok(self.decoder.infer(&input)?.into_values())
    }

    /// `k` counterfactual candidates for `x`, as encoded vectors.
    pub fn generate<R: Rng + ?Sized>(&self, x: &[f64], target: usize, k: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if !self.trained {
            return Err(Error::State("generator has not been trained".into()));
        }
        let (mean, std) = self.encode(x, target)?;
        (0..k)
            .map(|_| self.decode(&sample_latent(&mean, &std, rng), target))
            .collect()
    }

    /// Batched generation: row `i` of the result holds the `j`-th candidate of
    /// input `i / k`.
    pub fn generate_batch<R: Rng + ?Sized>(
        &self,
        xs: &[Vec<f64>],
        targets: &[usize],
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        if !self.trained {
            return Err(Error::State("generator has not been trained".into()));
        }
        if xs.len() != targets.len() {
            return Err(Error::dim("generation targets", xs.len(), targets.len()));
        }
        if xs.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let input = with_class(&Tensor::from_rows(xs)?, targets, self.features())?;
        let mean = self.encoder_mean.infer(&input)?;
        let std = self.encoder_std.infer(&input)?;
        let l = self.latent_dim();
        let mut z = Vec::with_capacity(xs.len() * k * l);
        let mut tz = Vec::with_capacity(xs.len() * k);
        for (i, &t) in targets.iter().enumerate() {
            for _ in 0..k {
                z.extend(sample_latent(mean.row_slice(i), std.row_slice(i), rng));
                tz.push(t);
            }
        }
        let zin = with_class(&Tensor::new(xs.len() * k, l, z)?, &tz, l)?;
        Ok(self.decoder.infer(&zin)?.to_rows())
    }

    /// Records `encode -> sample -> decode` for a batch. `eps` supplies the
    /// standard-normal draws (`[n, latent]`).
    pub fn record<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        targets: &[usize],
        eps: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<CfPass> {
        if x.cols() != self.features() {
            return Err(Error::dim("generator input width", self.features(), x.cols()));
        }
        if eps.shape() != [x.rows(), self.latent_dim()] {
            return Err(Error::dim(
                "latent noise shape",
                format!("[{}, {}]", x.rows(), self.latent_dim()),
                format!("{:?}", eps.shape()),
            ));
        }
        let xv = tape.leaf(x.clone());
        let cls = tape.leaf(class_column(targets));
        let xin = tape.concat(&[xv, cls]);
        let m = self.encoder_mean.record(tape, xin, training, rng)?;
        let s = self.encoder_std.record(tape, xin, training, rng)?;
        let e = tape.leaf(eps.clone());
        let noise = tape.mul(s.output, e);
        let z = tape.add(m.output, noise);
        let zin = tape.concat(&[z, cls]);
        let d = self.decoder.record(tape, zin, training, rng)?;
        let mut params = m.params;
        params.extend(s.params);
        params.extend(d.params);
        Ok(CfPass {
            x: xv,
            mean: m.output,
            std: s.output,
            z,
            xcf: d.output,
            params,
        })
    }

    /// Per-row KL of the recorded posterior against the class prior, `[n, 1]`.
    pub fn record_kl(&self, tape: &mut Tape, pass: &CfPass, targets: &[usize]) -> Var {
        let [n, l] = tape.value(pass.mean).shape();
        let mut mu_p = Tensor::zeros(n, l);
        let mut inv_two_var = Tensor::zeros(n, l);
        let mut constant = Tensor::zeros(n, l);
        for (i, &t) in targets.iter().enumerate() {
            for j in 0..l {
                let sp = self.prior.stds[t][j];
                mu_p.set(i, j, self.prior.means[t][j]);
                inv_two_var.set(i, j, 1.0 / (2.0 * sp * sp));
                constant.set(i, j, sp.ln() - 0.5);
            }
        }
        let log_sq = tape.log(pass.std);
        let neg_log_sq = tape.scale(log_sq, -1.0);
        let var_q = tape.square(pass.std);
        let neg_mu_p = mu_p.map(|v| -v);
        let diff = tape.add_const(pass.mean, &neg_mu_p);
        let diff_sq = tape.square(diff);
        let num = tape.add(var_q, diff_sq);
        let quad = tape.mul_const(num, inv_two_var);
        let t = tape.add(neg_log_sq, quad);
        let t = tape.add_const(t, &constant);
        tape.sum_cols(t)
    }

    /// Writes the three networks to `path` and the prior to a JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_networks(
            path,
            &[
                ("encoder_mean", &self.encoder_mean),
                ("encoder_std", &self.encoder_std),
                ("decoder", &self.decoder),
            ],
        )?;
        let prior = serde_json::to_string_pretty(&self.prior)?;
        let side = prior_path(path);
        std::fs::write(&side, prior).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut nets = load_networks(path)?;
        let side = prior_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        CfVae::from_networks(
            take_network(&mut nets, "encoder_mean")?,
            take_network(&mut nets, "encoder_std")?,
            take_network(&mut nets, "decoder")?,
            serde_json::from_str(&text)?,
        )
    }

    /// Forward-only parameter snapshot, used to assert generation leaves the
    /// model untouched.
    pub fn params_flat(&self) -> Vec<f64> {
        [&self.encoder_mean, &self.encoder_std, &self.decoder]
            .iter()
            .flat_map(|m| m.params().iter().flat_map(|p| p.values().to_vec()))
            .collect()
    }
}

fn class_column(targets: &[usize]) -> Tensor {
    Tensor::column(targets.iter().map(|&t| t as f64).collect())
}

fn with_class(x: &Tensor, targets: &[usize], width: usize) -> Result<Tensor> {
    if x.cols() != width {
        return Err(Error::dim("conditioning input width", width, x.cols()));
    }
    if x.rows() != targets.len() {
        return Err(Error::dim("conditioning targets", x.rows(), targets.len()));
    }
    let mut out = Vec::with_capacity(x.rows() * (width + 1));
    for (r, &t) in targets.iter().enumerate() {
        out.extend_from_slice(x.row_slice(r));
        out.push(t as f64);
    }
    Tensor::new(x.rows(), width + 1, out)
}

/// `mean + std * eps` with `eps ~ N(0, I)`.
pub fn sample_latent<R: Rng + ?Sized>(mean: &[f64], std: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(std)
        .map(|(m, s)| {
            let e: f64 = rng.sample(StandardNormal);
            m + s * e
        })
        .collect()
}

/// `KL(N(mean, std^2) || N(prior_mean, prior_std^2))` summed over dimensions.
pub fn kl_closed_form(mean: &[f64], std: &[f64], prior_mean: &[f64], prior_std: &[f64]) -> f64 {
    mean.iter()
        .zip(std)
        .zip(prior_mean.iter().zip(prior_std))
        .map(|((mq, sq), (mp, sp))| (sp / sq).ln() + (sq * sq + (mq - mp).powi(2)) / (2.0 * sp * sp) - 0.5)
        .sum()
}

/// `max(max_{y != target} s_y - s_target, -margin)`.
pub fn hinge_validity_loss(scores: &[f64], target: usize, margin: f64) -> f64 {
    let best_other = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    (best_other - scores[target]).max(-margin)
}

/// Differentiable per-row hinge on a `[n, classes]` score node, `[n, 1]`.
pub fn record_hinge(tape: &mut Tape, scores: Var, targets: &[usize], margin: f64) -> Var {
    let [n, c] = tape.value(scores).shape();
    let mut others = Tensor::filled(n, c, 1.0);
    let mut onehot = Tensor::zeros(n, c);
    for (i, &t) in targets.iter().enumerate() {
        others.set(i, t, 0.0);
        onehot.set(i, t, 1.0);
    }
    let best_other = tape.row_max_masked(scores, &others);
    let picked = tape.mul_const(scores, onehot);
    let target_score = tape.sum_cols(picked);
    let gap = tape.sub(best_other, target_score);
    let shifted = tape.affine(gap, 1.0, margin);
    let clipped = tape.relu(shifted);
    tape.affine(clipped, 1.0, -margin)
}

/// Per-row sum of absolute differences, `[n, 1]`.
pub fn record_l1(tape: &mut Tape, x: Var, xcf: Var) -> Var {
    let d = tape.sub(xcf, x);
    let a = tape.abs(d);
    tape.sum_cols(a)
}

/// Pluggable proximity and penalty terms of the generator objective.
pub trait CfObjective {
    /// Per-row proximity, `[n, 1]`.
    fn distance(&self, tape: &mut Tape, x: Var, xcf: Var) -> Result<Var> {
        Ok(record_l1(tape, x, xcf))
    }

    /// Optional extra per-row penalty, `[n, 1]`, added to the row objective.
    fn penalty(&self, _tape: &mut Tape, _x: Var, _xcf: Var) -> Result<Option<Var>> {
        Ok(None)
    }
}

/// Plain l1 proximity and no penalty.
#[derive(Clone, Copy, Debug, Default)]
pub struct L1Objective;

impl CfObjective for L1Objective {}

/// The recorded objective and its components.
pub struct CfLoss {
    pub pass: CfPass,
    /// Per-row `dist + lambda * hinge + KL (+ penalty)`, `[n, 1]`.
    pub rows: Var,
    pub distance: Var,
    pub hinge: Var,
    pub kl: Var,
    pub penalty: Option<Var>,
}

/// Records the per-row generator objective for one batch.
#[allow(clippy::too_many_arguments)]
pub fn record_cf_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    vae: &CfVae,
    classifier: &Classifier,
    x: &Tensor,
    targets: &[usize],
    eps: &Tensor,
    config: &VaeTrainConfig,
    objective: &dyn CfObjective,
    training: bool,
    rng: &mut R,
) -> Result<CfLoss> {
    let pass = vae.record(tape, x, targets, eps, training, rng)?;
    let distance = objective.distance(tape, pass.x, pass.xcf)?;
    let scores = classifier.record_scores(tape, pass.xcf)?;
    let hinge = record_hinge(tape, scores, targets, config.margin);
    let kl = vae.record_kl(tape, &pass, targets);
    let weighted = tape.scale(hinge, config.validity_weight);
    let mut rows = tape.add(distance, weighted);
    rows = tape.add(rows, kl);
    let penalty = objective.penalty(tape, pass.x, pass.xcf)?;
    if let Some(p) = penalty {
        rows = tape.add(rows, p);
    }
    Ok(CfLoss {
        pass,
        rows,
        distance,
        hinge,
        kl,
        penalty,
    })
}

/// Mean generator objective over one batch, with gradient-free evaluation.
pub fn base_gen_cf_loss(
    vae: &CfVae,
    classifier: &Classifier,
    x: &Tensor,
    targets: &[usize],
    eps: &Tensor,
    config: &VaeTrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut r = rng::seeded(0);
    let l = record_cf_loss(&mut tape, vae, classifier, x, targets, eps, config, &L1Objective, false, &mut r)?;
    let m = tape.mean(l.rows);
    Ok(tape.value(m).item())
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(rows, cols, v).expect("noise shape")
}

/// Applies one optimizer step per network from gradients of the pass params.
pub(crate) struct VaeOptimizer {
    opts: [Optimizer; 3],
}

impl VaeOptimizer {
    pub(crate) fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        Ok(VaeOptimizer {
            opts: [Optimizer::new(kind, lr)?, Optimizer::new(kind, lr)?, Optimizer::new(kind, lr)?],
        })
    }

    pub(crate) fn step(&mut self, vae: &mut CfVae, pass: &CfPass, grads: &crate::nn::Gradients) -> Result<()> {
        let mut offset = 0;
        let mut all_grads = Vec::with_capacity(3);
        for net in [&vae.encoder_mean, &vae.encoder_std, &vae.decoder] {
            let count = net.params().len();
            let g: Vec<Tensor> = pass.params[offset..offset + count]
                .iter()
                .zip(net.params())
                .map(|(&v, p)| grads.wrt_or_zeros(v, p.shape()))
                .collect();
            if g.iter().any(|t| !t.is_finite()) {
                return Err(Error::Numeric(format!(
                    "generator gradient non-finite at optimizer step {}",
                    self.opts[0].steps() + 1
                )));
            }
            all_grads.push(g);
            offset += count;
        }
        for ((net, opt), g) in vae.nets_mut().into_iter().zip(&mut self.opts).zip(&all_grads) {
            opt.step(net.params_mut(), g)?;
        }
        Ok(())
    }
}

/// Epoch-level training trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch_losses: Vec<f64>,
}

/// Targets under the flip policy for every row.
pub fn flip_targets(classifier: &Classifier, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
    let pred = classifier.predict(&Tensor::from_rows(rows)?)?;
    Ok(pred.into_iter().map(|p| flip_target(p, classifier.num_classes())).collect())
}

/// Trains the generator on `rows` with an arbitrary objective.
pub fn train_with_objective(
    vae: &mut CfVae,
    classifier: &Classifier,
    rows: &[Vec<f64>],
    config: &VaeTrainConfig,
    objective: &dyn CfObjective,
) -> Result<TrainTrace> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::InsufficientData("generator training set is empty".into()));
    }
    let frozen = classifier.param_hash();
    let targets = flip_targets(classifier, rows)?;
    let x_all = Tensor::from_rows(rows)?;
    let mut shuffle = rng::derive(config.seed, 11);
    let mut noise = rng::derive(config.seed, 12);
    let mut opt = VaeOptimizer::new(config.optimizer, config.learning_rate)?;
    let mut trace = TrainTrace::default();
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in minibatches(rows.len(), config.batch_size, &mut shuffle) {
            let mut idx = Vec::with_capacity(batch.len() * config.samples_per_input);
            for _ in 0..config.samples_per_input {
                idx.extend_from_slice(&batch);
            }
            let x = x_all.select_rows(&idx);
            let t: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let eps = standard_normal(idx.len(), vae.latent_dim(), &mut noise);
            let mut tape = Tape::new();
            let l = record_cf_loss(&mut tape, vae, classifier, &x, &t, &eps, config, objective, true, &mut noise)?;
            let loss = tape.mean(l.rows);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "generator loss non-finite at epoch {epoch} (batch of {} rows)",
                    idx.len()
                )));
            }
            total += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            opt.step(vae, &l.pass, &grads)?;
        }
        let mean = total / rows.len() as f64;
        info!("generator epoch {epoch}: loss {mean:.5}");
        trace.epoch_losses.push(mean);
    }
    if classifier.param_hash() != frozen {
        return Err(Error::State("classifier parameters changed during generator training".into()));
    }
    vae.trained = true;
    Ok(trace)
}

/// Base generator training with plain l1 proximity.
pub fn train_base(vae: &mut CfVae, classifier: &Classifier, rows: &[Vec<f64>], config: &VaeTrainConfig) -> Result<TrainTrace> {
    train_with_objective(vae, classifier, rows, config, &L1Objective)
}

/// Warns when `target` equals the classifier's current prediction.
pub fn check_target(classifier: &Classifier, x: &[f64], target: usize) -> Result<()> {
    if classifier.predict_class(x)? == target {
        warn!("target class {target} already equals the model prediction");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_examples() {
        assert!((hinge_validity_loss(&[0.2, 0.8], 1, 0.05) + 0.05).abs() < 1e-15);
        assert!((hinge_validity_loss(&[0.8, 0.2], 1, 0.05) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_closed_form(&[0.3], &[0.7], &[0.3], &[0.7]), 0.0);
        assert!((kl_closed_form(&[1.0], &[1.0], &[0.0], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_std_sample_is_mean() {
        let mut r = rng::seeded(3);
        assert_eq!(sample_latent(&[1.0, -2.0], &[0.0, 0.0], &mut r), vec![1.0, -2.0]);
    }

    #[test]
    fn untrained_generation_is_a_state_error() {
        let vae = CfVae::init(3, 2, 1).unwrap();
        let mut r = rng::seeded(0);
        assert!(matches!(vae.generate(&[0.1, 0.2, 0.3], 1, 2, &mut r), Err(Error::State(_))));
    }

    #[test]
    fn widths_follow_the_architecture() {
        let vae = CfVae::init(3, 2, 1).unwrap();
        assert_eq!(vae.encoder_mean.spec().widths, vec![4, 20, 16, 14, 12, 10]);
        assert_eq!(vae.decoder.spec().widths, vec![11, 12, 14, 16, 20, 3]);
        let (_, std) = vae.encode(&[0.1, 0.2, 0.3], 0).unwrap();
        assert!(std.iter().all(|&s| s > 0.0 && s < 1.0));
    }
}
