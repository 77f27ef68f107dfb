use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, FeatureSchema};
use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};
use crate::scm::{Mechanism, Scm};
use crate::vae::CfObjective;

/// Partition of the modelled features into exogenous and endogenous sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalProximityConfig {
    pub exogenous: Vec<String>,
    pub endogenous: Vec<String>,
    /// Weight on the endogenous terms.
    pub weight: f64,
}

impl CausalProximityConfig {
    /// Sources as exogenous, every parented feature node as endogenous.
    pub fn from_scm(scm: &Scm, weight: f64) -> Self {
        CausalProximityConfig {
            exogenous: scm.exogenous(),
            endogenous: scm.endogenous(),
            weight,
        }
    }
}

/// A mechanism rewritten over scaled encoded columns:
/// `raw = c0 + Σ c_i * s_i`, optionally followed by `q * raw^2 + r`.
#[derive(Clone, Debug, PartialEq)]
struct ScaledMechanism {
    column: usize,
    parent_columns: Vec<usize>,
    constant: f64,
    coefficients: Vec<f64>,
    quadratic: Option<(f64, f64)>,
    out_min: f64,
    out_width: f64,
}

impl ScaledMechanism {
    fn eval(&self, xcf: &[f64]) -> f64 {
        let lin = self.constant
            + self
                .coefficients
                .iter()
                .zip(&self.parent_columns)
                .map(|(c, &j)| c * xcf[j])
                .sum::<f64>();
        let raw = match self.quadratic {
            Some((q, r)) => q * lin * lin + r,
            None => lin,
        };
        (raw - self.out_min) / self.out_width
    }

    fn record(&self, tape: &mut Tape, xcf: Var) -> Var {
        let n = tape.value(xcf).rows();
        let parents = tape.select_cols(xcf, &self.parent_columns);
        let coef = Tensor::new(
            n,
            self.coefficients.len(),
            (0..n).flat_map(|_| self.coefficients.iter().copied()).collect(),
        )
        .expect("coefficient broadcast");
        let weighted = tape.mul_const(parents, coef);
        let summed = tape.sum_cols(weighted);
        let lin = tape.affine(summed, 1.0, self.constant);
        let raw = match self.quadratic {
            Some((q, r)) => {
                let sq = tape.square(lin);
                tape.affine(sq, q, r)
            }
            None => lin,
        };
        tape.affine(raw, 1.0 / self.out_width, -self.out_min / self.out_width)
    }
}

fn continuous(schema: &FeatureSchema, name: &str) -> Result<(usize, f64, f64)> {
    let col = schema.index_of(name)?;
    match schema.columns()[col].kind {
        ColumnKind::Continuous { min, max } => Ok((schema.encoded_slot(col).0, min, max - min)),
        _ => Err(Error::Config(format!("causal feature '{name}' must be continuous"))),
    }
}

/// Rewrites an affine-in-parents mechanism over scaled columns. Returns the
/// parent columns, constant and coefficients of `Σ c_i raw_i` in scaled form.
fn affine_in_scaled(
    schema: &FeatureSchema,
    parents: &[String],
    raw_coefficients: &[f64],
    intercept: f64,
) -> Result<(Vec<usize>, f64, Vec<f64>)> {
    let mut cols = Vec::with_capacity(parents.len());
    let mut constant = intercept;
    let mut coefs = Vec::with_capacity(parents.len());
    for (p, &c) in parents.iter().zip(raw_coefficients) {
        let (offset, min, width) = continuous(schema, p)?;
        cols.push(offset);
        constant += c * min;
        coefs.push(c * width);
    }
    Ok((cols, constant, coefs))
}

/// Structural proximity: l1 on every encoded column outside the endogenous
/// set, plus `weight * |x_cf_v - scale(f(parents_cf))|` for each endogenous `v`.
#[derive(Clone, Debug)]
pub struct CausalProximity {
    config: CausalProximityConfig,
    scm: Scm,
    schema: FeatureSchema,
    mechanisms: Vec<ScaledMechanism>,
    exogenous_mask: Vec<f64>,
}

impl CausalProximity {
    pub fn new(schema: &FeatureSchema, scm: &Scm, config: CausalProximityConfig) -> Result<Self> {
        if !(config.weight > 0.0) {
            return Err(Error::Config("endogenous weight must be positive".into()));
        }
        for u in &config.exogenous {
            if config.endogenous.contains(u) {
                return Err(Error::Config(format!("'{u}' is both exogenous and endogenous")));
            }
            schema.index_of(u)?;
        }
        let modelled: Vec<&String> = config.exogenous.iter().chain(&config.endogenous).collect();
        for c in schema.continuous_columns() {
            let name = &schema.columns()[c].name;
            if !modelled.contains(&name) {
                return Err(Error::Config(format!(
                    "continuous feature '{name}' is in neither the exogenous nor the endogenous set"
                )));
            }
        }
        let mut mechanisms = Vec::with_capacity(config.endogenous.len());
        for v in &config.endogenous {
            let parents = scm.parents(v)?;
            if parents.is_empty() {
                return Err(Error::Config(format!("endogenous feature '{v}' has no mechanism parents")));
            }
            for p in &parents {
                if !modelled.contains(&p) {
                    return Err(Error::Config(format!("mechanism of '{v}' consumes unmodelled feature '{p}'")));
                }
            }
            let (column, out_min, out_width) = continuous(schema, v)?;
            let m = match scm.mechanism(v)? {
                Mechanism::LinearGaussian {
                    intercept,
                    coefficients,
                    ..
                } => {
                    let (cols, constant, coefs) = affine_in_scaled(schema, &parents, coefficients, *intercept)?;
                    ScaledMechanism {
                        column,
                        parent_columns: cols,
                        constant,
                        coefficients: coefs,
                        quadratic: None,
                        out_min,
                        out_width,
                    }
                }
                Mechanism::QuadraticSumGaussian { scale, intercept, .. } => {
                    let ones = vec![1.0; parents.len()];
                    let (cols, constant, coefs) = affine_in_scaled(schema, &parents, &ones, 0.0)?;
                    ScaledMechanism {
                        column,
                        parent_columns: cols,
                        constant,
                        coefficients: coefs,
                        quadratic: Some((*scale, *intercept)),
                        out_min,
                        out_width,
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "mechanism of '{v}' ({other:?}) cannot drive causal proximity"
                    )))
                }
            };
            mechanisms.push(m);
        }
        let mut exogenous_mask = vec![1.0; schema.encoded_width()];
        for m in &mechanisms {
            exogenous_mask[m.column] = 0.0;
        }
        Ok(CausalProximity {
            config,
            scm: scm.clone(),
            schema: schema.clone(),
            mechanisms,
            exogenous_mask,
        })
    }

    pub fn config(&self) -> &CausalProximityConfig {
        &self.config
    }

    fn mechanism_for(&self, v: &str) -> Result<&ScaledMechanism> {
        let i = self
            .config
            .endogenous
            .iter()
            .position(|e| e == v)
            .ok_or_else(|| Error::Config(format!("'{v}' has no mechanism in the causal proximity config")))?;
        Ok(&self.mechanisms[i])
    }

    /// Scaled mechanism prediction for `v`, evaluated through the SCM in raw units.
    pub fn predicted_scaled(&self, v: &str, xcf: &[f64]) -> Result<f64> {
        let m = self.mechanism_for(v)?;
        let parents = self.scm.parents(v)?;
        let raw: Vec<f64> = parents
            .iter()
            .map(|p| {
                let c = self.schema.index_of(p)?;
                Ok(self.schema.unscale(c, xcf[self.schema.encoded_slot(c).0]))
            })
            .collect::<Result<_>>()?;
        let e = self.scm.mechanism_expectation(v, &raw)?;
        Ok((e - m.out_min) / m.out_width)
    }

    /// `|x_cf_v - f(parents_cf)|` on the scaled feature.
    pub fn dist_causal_node(&self, v: &str, xcf: &[f64]) -> Result<f64> {
        let m = self.mechanism_for(v)?;
        Ok((xcf[m.column] - self.predicted_scaled(v, xcf)?).abs())
    }

    /// Exogenous l1 plus weighted endogenous terms for one pair.
    pub fn dist_causal_total(&self, x: &[f64], xcf: &[f64]) -> f64 {
        let exo: f64 = x
            .iter()
            .zip(xcf)
            .zip(&self.exogenous_mask)
            .map(|((a, b), m)| m * (b - a).abs())
            .sum();
        let endo: f64 = self.mechanisms.iter().map(|m| (xcf[m.column] - m.eval(xcf)).abs()).sum();
        exo + self.config.weight * endo
    }

    /// Squared-l2 variant: exogenous squared deviations plus weighted squared
    /// residuals against the mechanism.
    pub fn dist_causal_total_l2(&self, x: &[f64], xcf: &[f64]) -> f64 {
        let exo: f64 = x
            .iter()
            .zip(xcf)
            .zip(&self.exogenous_mask)
            .map(|((a, b), m)| m * (b - a).powi(2))
            .sum();
        let endo: f64 = self.mechanisms.iter().map(|m| (xcf[m.column] - m.eval(xcf)).powi(2)).sum();
        exo + self.config.weight * endo
    }

    /// The same quantity written as the squared gap between the observed
    /// change `x_cf_v - x_v` and the mechanism-predicted change
    /// `f(parents_cf) - f(parents)`. Equal to [`Self::dist_causal_total_l2`]
    /// whenever `x` itself sits on its mechanisms.
    pub fn relative_change_l2(&self, x: &[f64], xcf: &[f64]) -> f64 {
        let exo: f64 = x
            .iter()
            .zip(xcf)
            .zip(&self.exogenous_mask)
            .map(|((a, b), m)| m * (b - a).powi(2))
            .sum();
        let endo: f64 = self
            .mechanisms
            .iter()
            .map(|m| {
                let observed = xcf[m.column] - x[m.column];
                let predicted = m.eval(xcf) - m.eval(x);
                (observed - predicted).powi(2)
            })
            .sum();
        exo + self.config.weight * endo
    }

    /// Differentiable per-row distance, `[n, 1]`.
    pub fn record(&self, tape: &mut Tape, x: Var, xcf: Var) -> Var {
        let n = tape.value(x).rows();
        let diff = tape.sub(xcf, x);
        let a = tape.abs(diff);
        let mask = Tensor::new(
            n,
            self.exogenous_mask.len(),
            (0..n).flat_map(|_| self.exogenous_mask.iter().copied()).collect(),
        )
        .expect("mask broadcast");
        let masked = tape.mul_const(a, mask);
        let mut total = tape.sum_cols(masked);
        if self.mechanisms.is_empty() {
            return total;
        }
        let mut endo: Option<Var> = None;
        for m in &self.mechanisms {
            let pred = m.record(tape, xcf);
            let own = tape.select_col(xcf, m.column);
            let r = tape.sub(own, pred);
            let r = tape.abs(r);
            endo = Some(match endo {
                Some(e) => tape.add(e, r),
                None => r,
            });
        }
        let weighted = tape.scale(endo.expect("nonempty"), self.config.weight);
        total = tape.add(total, weighted);
        total
    }
}

impl CfObjective for CausalProximity {
    fn distance(&self, tape: &mut Tape, x: Var, xcf: Var) -> Result<Var> {
        Ok(self.record(tape, x, xcf))
    }
}
