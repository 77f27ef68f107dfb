//! Evaluation metrics over a batch of `N` inputs with `K` counterfactuals each.
//! Counterfactual row `i * K + j` belongs to input `i`.

use std::fmt;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::data::{FeatureSchema, MadStats, RawValue};
use crate::error::{Error, Result};
use crate::nn::{minibatches, Activation, Mlp, MlpSpec, Optimizer, Tape, Tensor};
use crate::oracle::{change, Change, Oracle};
use crate::rng;
use crate::scm::Scm;
use crate::vae::{DROPOUT, HIDDEN, LATENT_DIM};

fn per_input(inputs: usize, cfs: usize) -> Result<usize> {
    if inputs == 0 || cfs == 0 || !cfs.is_multiple_of(inputs) {
        return Err(Error::dim("counterfactuals per input", inputs, cfs));
    }
    Ok(cfs / inputs)
}

/// Fraction of counterfactuals the classifier assigns to their target.
pub fn target_class_validity(classifier: &Classifier, cfs: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    let k = per_input(targets.len(), cfs.len())?;
    let pred = classifier.predict(&Tensor::from_rows(cfs)?)?;
    let hits = pred.iter().enumerate().filter(|(r, &p)| p == targets[r / k]).count();
    Ok(hits as f64 / cfs.len() as f64)
}

/// Negated mean raw deviation in MAD units over continuous features.
pub fn cont_proximity(schema: &FeatureSchema, inputs: &[Vec<RawValue>], cfs: &[Vec<RawValue>], mad: &MadStats) -> Result<f64> {
    let k = per_input(inputs.len(), cfs.len())?;
    let cols = schema.continuous_columns();
    if cols.is_empty() {
        return Err(Error::Config("no continuous features for continuous proximity".into()));
    }
    let mads: Vec<f64> = cols.iter().map(|&c| mad.get(&schema.columns()[c].name)).collect::<Result<_>>()?;
    let mut total = 0.0;
    for (r, cf) in cfs.iter().enumerate() {
        let x = &inputs[r / k];
        for (&c, &m) in cols.iter().zip(&mads) {
            total += (num(&cf[c])? - num(&x[c])?).abs() / m;
        }
    }
    Ok(-total / (cfs.len() * cols.len()) as f64)
}

/// Negated mean mismatch rate over categorical features.
pub fn cat_proximity(schema: &FeatureSchema, inputs: &[Vec<RawValue>], cfs: &[Vec<RawValue>]) -> Result<f64> {
    let k = per_input(inputs.len(), cfs.len())?;
    let cols = schema.categorical_columns();
    if cols.is_empty() {
        return Err(Error::Config("no categorical features for categorical proximity".into()));
    }
    let mut mismatches = 0usize;
    for (r, cf) in cfs.iter().enumerate() {
        let x = &inputs[r / k];
        mismatches += cols.iter().filter(|&&c| cf[c] != x[c]).count();
    }
    Ok(-(mismatches as f64) / (cfs.len() * cols.len()) as f64)
}

fn num(v: &RawValue) -> Result<f64> {
    v.as_num()
        .ok_or_else(|| Error::Config(format!("expected a numeric value, got '{v}'")))
}

/// `2 * s1 * s2 / (s1 + s2)`, or 0 when both are 0.
pub fn harmonic_mean(s1: f64, s2: f64) -> f64 {
    if s1 + s2 == 0.0 {
        0.0
    } else {
        2.0 * s1 * s2 / (s1 + s2)
    }
}

/// Sub-constraint percentages of a monotonic constraint and their harmonic mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicScore {
    /// Percent of CFs with every cause up whose effect is up.
    pub s1: f64,
    /// Percent of CFs with every cause down whose effect is down.
    pub s2: f64,
    pub s1_applicable: usize,
    pub s2_applicable: usize,
    pub score: f64,
}

/// Monotonic feasibility on raw values; each sub-percentage counts only
/// the CFs where its antecedent holds (0 when none do).
pub fn monotonic_feasibility(
    schema: &FeatureSchema,
    inputs: &[Vec<RawValue>],
    cfs: &[Vec<RawValue>],
    causes: &[String],
    effect: &str,
) -> Result<MonotonicScore> {
    let k = per_input(inputs.len(), cfs.len())?;
    let cause_cols: Vec<usize> = causes.iter().map(|c| schema.index_of(c)).collect::<Result<_>>()?;
    let effect_col = schema.index_of(effect)?;
    let (mut s1n, mut s1d, mut s2n, mut s2d) = (0usize, 0usize, 0usize, 0usize);
    for (r, cf) in cfs.iter().enumerate() {
        let x = &inputs[r / k];
        let ch = |c: usize| -> Result<Change> { Ok(change(schema.raw_score(c, &x[c])?, schema.raw_score(c, &cf[c])?)) };
        let moves = cause_cols.iter().map(|&c| ch(c)).collect::<Result<Vec<_>>>()?;
        let e = ch(effect_col)?;
        if moves.iter().all(|&m| m == Change::Up) {
            s1d += 1;
            s1n += (e == Change::Up) as usize;
        }
        if moves.iter().all(|&m| m == Change::Down) {
            s2d += 1;
            s2n += (e == Change::Down) as usize;
        }
    }
    let pct = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
    let (s1, s2) = (pct(s1n, s1d), pct(s2n, s2d));
    Ok(MonotonicScore {
        s1,
        s2,
        s1_applicable: s1d,
        s2_applicable: s2d,
        score: harmonic_mean(s1, s2),
    })
}

/// Percent of CFs an oracle labels feasible.
pub fn oracle_feasibility(oracle: &Oracle, schema: &FeatureSchema, inputs: &[Vec<RawValue>], cfs: &[Vec<RawValue>]) -> Result<f64> {
    let k = per_input(inputs.len(), cfs.len())?;
    let mut ok = 0usize;
    for (r, cf) in cfs.iter().enumerate() {
        ok += oracle.label(schema, &inputs[r / k], cf)? as usize;
    }
    Ok(100.0 * ok as f64 / cfs.len() as f64)
}

fn scm_row(scm: &Scm, schema: &FeatureSchema, row: &[RawValue]) -> Result<Vec<f64>> {
    scm.feature_names()
        .iter()
        .map(|n| num(&row[schema.index_of(n)?]))
        .collect()
}

/// Mean over CFs of the summed edge log-likelihood of the CF divided by that
/// of its input. Rows whose input log-likelihood is exactly 0 are skipped.
pub fn causal_edge_score(
    scm: &Scm,
    schema: &FeatureSchema,
    inputs: &[Vec<RawValue>],
    cfs: &[Vec<RawValue>],
    nodes: &[String],
) -> Result<f64> {
    let k = per_input(inputs.len(), cfs.len())?;
    if nodes.is_empty() {
        return Err(Error::Config("causal-edge score needs at least one node".into()));
    }
    let loglik = |row: &[RawValue]| -> Result<f64> {
        let r = scm_row(scm, schema, row)?;
        nodes.iter().map(|v| scm.edge_log_likelihood(v, &r)).sum()
    };
    let originals: Vec<f64> = inputs.iter().map(|x| loglik(x)).collect::<Result<_>>()?;
    let (mut total, mut used) = (0.0, 0usize);
    for (r, cf) in cfs.iter().enumerate() {
        let denom = originals[r / k];
        if denom == 0.0 {
            warn!("skipping counterfactual {r}: input log-likelihood is 0");
            continue;
        }
        total += loglik(cf)? / denom;
        used += 1;
    }
    if used == 0 {
        return Err(Error::InsufficientData("every causal-edge denominator was 0".into()));
    }
    Ok(total / used as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// A reconstruction network with the generator's encoder and decoder widths.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub net: Mlp,
}

impl Autoencoder {
    pub fn spec(features: usize) -> Result<MlpSpec> {
        let mut widths = vec![features];
        widths.extend(HIDDEN);
        widths.push(LATENT_DIM);
        widths.extend(HIDDEN.iter().rev());
        widths.push(features);
        let layers = widths.len() - 1;
        let mut activations = vec![Activation::Relu; layers];
        activations[HIDDEN.len()] = Activation::Identity;
        activations[layers - 1] = Activation::Sigmoid;
        let mut dropout = vec![DROPOUT; layers];
        dropout[HIDDEN.len()] = 0.0;
        dropout[layers - 1] = 0.0;
        MlpSpec::new(widths, activations, dropout)
    }

    /// Trains on mean squared reconstruction error with Adam.
    pub fn train(rows: &[Vec<f64>], config: &AutoencoderConfig) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientData("autoencoder training set is empty".into()));
        }
        let mut net = Mlp::init(Self::spec(rows[0].len())?, &mut rng::derive(config.seed, 50))?;
        let mut shuffle = rng::derive(config.seed, 51);
        let mut opt = Optimizer::adam(config.learning_rate)?;
        let x_all = Tensor::from_rows(rows)?;
        for epoch in 0..config.epochs {
            let mut total = 0.0;
            for batch in minibatches(rows.len(), config.batch_size, &mut shuffle) {
                let xb = x_all.select_rows(&batch);
                let mut tape = Tape::new();
                let x = tape.leaf(xb.clone());
                let vars = net.record(&mut tape, x, true, &mut shuffle)?;
                let diff = tape.add_const(vars.output, &xb.map(|v| -v));
                let sq = tape.square(diff);
                let loss = tape.mean(sq);
                let lv = tape.value(loss).item();
                if !lv.is_finite() {
                    return Err(Error::Numeric(format!("autoencoder loss non-finite at epoch {epoch}")));
                }
                total += lv * batch.len() as f64;
                let grads = tape.backward(loss)?;
                let g = net.collect_grads(&vars, &grads);
                opt.step(net.params_mut(), &g)?;
            }
            info!("autoencoder epoch {epoch}: loss {:.6}", total / rows.len() as f64);
        }
        Ok(Autoencoder { net })
    }

    pub fn reconstruct(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.net.infer(&Tensor::from_rows(rows)?)?.to_rows())
    }
}

/// One autoencoder per class plus one trained on every row.
#[derive(Clone, Debug, PartialEq)]
pub struct PerClassAutoencoder {
    pub per_class: Vec<Autoencoder>,
    pub all: Autoencoder,
}

impl PerClassAutoencoder {
    pub fn train(rows: &[Vec<f64>], labels: &[usize], classes: usize, config: &AutoencoderConfig) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::dim("autoencoder labels", rows.len(), labels.len()));
        }
        let per_class = (0..classes)
            .map(|c| {
                let subset: Vec<Vec<f64>> = rows
                    .iter()
                    .zip(labels)
                    .filter(|(_, &y)| y == c)
                    .map(|(r, _)| r.clone())
                    .collect();
                Autoencoder::train(&subset, &AutoencoderConfig { seed: config.seed.wrapping_add(1 + c as u64), ..config.clone() })
            })
            .collect::<Result<_>>()?;
        Ok(PerClassAutoencoder {
            per_class,
            all: Autoencoder::train(rows, config)?,
        })
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean of `||cf - AE_t(cf)|| / ||cf - AE_o(cf)||` over CFs with a nonzero denominator.
pub fn im1(cfs: &[Vec<f64>], ae_target: &[Vec<f64>], ae_original: &[Vec<f64>]) -> Result<f64> {
    ratio_mean("im1", cfs.len(), |r| (l2(&cfs[r], &ae_target[r]), l2(&cfs[r], &ae_original[r])))
}

/// Mean of `||AE(cf) - AE_t(cf)|| / ||cf||` over CFs with a nonzero denominator.
pub fn im2(cfs: &[Vec<f64>], ae_target: &[Vec<f64>], ae_all: &[Vec<f64>]) -> Result<f64> {
    let zero = vec![0.0; cfs.first().map_or(0, |c| c.len())];
    ratio_mean("im2", cfs.len(), |r| (l2(&ae_all[r], &ae_target[r]), l2(&cfs[r], &zero)))
}

fn ratio_mean(name: &str, n: usize, f: impl Fn(usize) -> (f64, f64)) -> Result<f64> {
    let (mut total, mut used) = (0.0, 0usize);
    for r in 0..n {
        let (num, den) = f(r);
        if den == 0.0 {
            warn!("{name}: skipping counterfactual {r} with zero denominator");
            continue;
        }
        total += num / den;
        used += 1;
    }
    if used == 0 {
        return Err(Error::InsufficientData(format!("{name}: no counterfactual with a nonzero denominator")));
    }
    Ok(total / used as f64)
}

/// Interpretability scores for a CF batch: reconstructions are taken under
/// the target-class, original-class and all-class autoencoders.
pub fn interpretability(aes: &PerClassAutoencoder, cfs: &[Vec<f64>], targets: &[usize], originals: &[usize]) -> Result<(f64, f64)> {
    let k = per_input(targets.len(), cfs.len())?;
    let by_class: Vec<Vec<Vec<f64>>> = aes.per_class.iter().map(|ae| ae.reconstruct(cfs)).collect::<Result<_>>()?;
    let class_rows = |classes: &[usize]| -> Result<Vec<Vec<f64>>> {
        (0..cfs.len())
            .map(|r| {
                by_class
                    .get(classes[r / k])
                    .map(|rows| rows[r].clone())
                    .ok_or_else(|| Error::Config(format!("no autoencoder for class {}", classes[r / k])))
            })
            .collect()
    };
    let t = class_rows(targets)?;
    let o = class_rows(originals)?;
    let all = aes.all.reconstruct(cfs)?;
    Ok((im1(cfs, &t, &o)?, im2(cfs, &t, &all)?))
}

/// Everything needed to score a CF batch beyond the classifier.
pub struct EvalContext<'a> {
    pub schema: &'a FeatureSchema,
    pub mad: &'a MadStats,
    /// `(causes, effect)` of the monotonic constraint, if any.
    pub monotonic: Option<(Vec<String>, String)>,
    pub oracles: Vec<(String, Oracle)>,
    /// SCM and scored nodes for the causal-edge score.
    pub scm: Option<(&'a Scm, Vec<String>)>,
    pub autoencoders: Option<&'a PerClassAutoencoder>,
}

/// Scores a batch of encoded CFs (`K` per input) against their targets.
pub fn evaluate(ctx: &EvalContext<'_>, classifier: &Classifier, inputs: &[Vec<f64>], cfs: &[Vec<f64>], targets: &[usize]) -> Result<MetricsReport> {
    let k = per_input(inputs.len(), cfs.len())?;
    let schema = ctx.schema;
    let raw_x: Vec<Vec<RawValue>> = inputs.iter().map(|x| schema.decode(x)).collect::<Result<_>>()?;
    let raw_cf: Vec<Vec<RawValue>> = cfs.iter().map(|x| schema.decode(x)).collect::<Result<_>>()?;
    let has_cont = !schema.continuous_columns().is_empty();
    let has_cat = !schema.categorical_columns().is_empty();
    let mut report = MetricsReport {
        inputs: inputs.len(),
        per_input: k,
        validity: target_class_validity(classifier, cfs, targets)?,
        cont_proximity: if has_cont { Some(cont_proximity(schema, &raw_x, &raw_cf, ctx.mad)?) } else { None },
        cat_proximity: if has_cat { Some(cat_proximity(schema, &raw_x, &raw_cf)?) } else { None },
        ..MetricsReport::default()
    };
    if let Some((causes, effect)) = &ctx.monotonic {
        report.monotonic = Some(monotonic_feasibility(schema, &raw_x, &raw_cf, causes, effect)?);
    }
    for (name, oracle) in &ctx.oracles {
        report.constraints.push((name.clone(), oracle_feasibility(oracle, schema, &raw_x, &raw_cf)?));
    }
    if let Some((scm, nodes)) = &ctx.scm {
        report.causal_edge = Some(causal_edge_score(scm, schema, &raw_x, &raw_cf, nodes)?);
    }
    if let Some(aes) = ctx.autoencoders {
        let originals = classifier.predict(&Tensor::from_rows(inputs)?)?;
        let (a, b) = interpretability(aes, cfs, targets, &originals)?;
        report.im1 = Some(a);
        report.im2 = Some(b);
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub inputs: usize,
    pub per_input: usize,
    pub validity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cont_proximity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cat_proximity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotonic: Option<MonotonicScore>,
    /// Named plain-percentage constraint scores.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<(String, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub causal_edge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub im1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub im2: Option<f64>,
}

impl MetricsReport {
    /// Feasibility headline: the monotonic harmonic mean if present, else the
    /// first plain constraint score.
    pub fn feasibility(&self) -> Option<f64> {
        self.monotonic
            .as_ref()
            .map(|m| m.score)
            .or_else(|| self.constraints.first().map(|c| c.1))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {} x {}", "inputs x counterfactuals", self.inputs, self.per_input)?;
        writeln!(f, "{:<28} {:.4}", "target-class validity", self.validity)?;
        let opt = |f: &mut fmt::Formatter<'_>, name: &str, v: Option<f64>| match v {
            Some(v) => writeln!(f, "{name:<28} {v:.4}"),
            None => Ok(()),
        };
        opt(f, "continuous proximity", self.cont_proximity)?;
        opt(f, "categorical proximity", self.cat_proximity)?;
        if let Some(m) = &self.monotonic {
            writeln!(
                f,
                "{:<28} {:.2} (S1 {:.2} of {}, S2 {:.2} of {})",
                "monotonic feasibility", m.score, m.s1, m.s1_applicable, m.s2, m.s2_applicable
            )?;
        }
        for (name, v) in &self.constraints {
            writeln!(f, "{:<28} {v:.2}", format!("feasibility {name}"))?;
        }
        opt(f, "causal-edge score", self.causal_edge)?;
        opt(f, "IM1", self.im1)?;
        opt(f, "IM2", self.im2)
    }
}
