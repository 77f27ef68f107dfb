use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Dataset, FeatureSchema};
use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};
use crate::vae::CfObjective;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    NonDecrease,
    NonIncrease,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnaryConstraint {
    pub feature: String,
    pub direction: Direction,
}

/// `-min(0, cf - x)` for non-decrease, mirrored for non-increase, on ordinal
/// scores (raw value or category rank).
pub fn unary_hinge(x_score: f64, cf_score: f64, direction: Direction) -> f64 {
    match direction {
        Direction::NonDecrease => (x_score - cf_score).max(0.0),
        Direction::NonIncrease => (cf_score - x_score).max(0.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Increasing,
    Decreasing,
}

/// Fitted `effect = a + Σ b_i * cause_i` in raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

/// A monotonic relation from one or more causes to an effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicConstraint {
    pub causes: Vec<String>,
    pub effect: String,
    pub sign: Sign,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<LinearFit>,
}

impl MonotonicConstraint {
    pub fn new(causes: Vec<String>, effect: impl Into<String>, sign: Sign) -> Self {
        MonotonicConstraint {
            causes,
            effect: effect.into(),
            sign,
            fit: None,
        }
    }

    fn fitted(&self) -> Result<&LinearFit> {
        self.fit
            .as_ref()
            .ok_or_else(|| Error::State(format!("monotonic constraint on '{}' is not fitted", self.effect)))
    }

    /// Effect predicted by the fitted line from raw cause values.
    pub fn predict(&self, causes: &[f64]) -> Result<f64> {
        let f = self.fitted()?;
        Ok(f.intercept + f.slopes.iter().zip(causes).map(|(b, c)| b * c).sum::<f64>())
    }
}

fn sse(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    (x * beta - y).norm_squared()
}

/// Sign-constrained least squares of `y` on `[1, causes]`.
///
/// Minimises the squared residual with every slope held to the declared
/// sign: all subsets of slopes pinned at zero are solved exactly and the
/// best admissible one is kept.
pub fn fit_sign_constrained(causes: &[Vec<f64>], effect: &[f64], sign: Sign) -> Result<LinearFit> {
    let n = effect.len();
    let k = causes.len();
    if k == 0 {
        return Err(Error::Config("monotonic constraint needs at least one cause".into()));
    }
    if causes.iter().any(|c| c.len() != n) {
        return Err(Error::dim("cause column length", n, causes[0].len()));
    }
    for (i, c) in causes.iter().enumerate() {
        let first = c.first().copied().unwrap_or(0.0);
        if c.iter().all(|&v| v == first) {
            return Err(Error::DegenerateFit(format!("cause {i} is constant")));
        }
    }
    if k > 16 {
        return Err(Error::Config("too many causes for an exact sign-constrained fit".into()));
    }
    let y = DVector::from_column_slice(effect);
    let admissible = |b: f64| match sign {
        Sign::Increasing => b >= 0.0,
        Sign::Decreasing => b <= 0.0,
    };
    let mut best: Option<(f64, LinearFit)> = None;
    for pinned in 0u32..(1 << k) {
        let free: Vec<usize> = (0..k).filter(|i| pinned & (1 << i) == 0).collect();
        let x = DMatrix::from_fn(n, free.len() + 1, |r, c| if c == 0 { 1.0 } else { causes[free[c - 1]][r] });
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let Some(beta) = xtx.clone().cholesky().map(|ch| ch.solve(&xty)) else {
            if free.len() == k {
                return Err(Error::DegenerateFit("cause columns are collinear".into()));
            }
            continue;
        };
        let mut slopes = vec![0.0; k];
        for (j, &i) in free.iter().enumerate() {
            slopes[i] = beta[j + 1];
        }
        if !slopes.iter().all(|&b| admissible(b)) {
            continue;
        }
        let err = sse(&x, &y, &beta);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((
                err,
                LinearFit {
                    intercept: beta[0],
                    slopes,
                },
            ));
        }
    }
    best.map(|(_, f)| f)
        .ok_or_else(|| Error::DegenerateFit("no admissible sign-constrained fit".into()))
}

fn numeric_column(data: &Dataset, name: &str) -> Result<Vec<f64>> {
    let j = data.schema.index_of(name)?;
    data.raw
        .iter()
        .map(|r| r[j].as_num().ok_or_else(|| Error::Config(format!("'{name}' must be continuous"))))
        .collect()
}

/// Fits the constraint's line on the raw training data.
pub fn fit_monotonic_linear(data: &Dataset, constraint: &MonotonicConstraint) -> Result<MonotonicConstraint> {
    let causes = constraint
        .causes
        .iter()
        .map(|c| numeric_column(data, c))
        .collect::<Result<Vec<_>>>()?;
    let effect = numeric_column(data, &constraint.effect)?;
    let mut out = constraint.clone();
    out.fit = Some(fit_sign_constrained(&causes, &effect, constraint.sign)?);
    Ok(out)
}

/// Column layout for reading an ordinal score off an encoded vector.
#[derive(Clone, Debug, PartialEq)]
struct ScoreLayout {
    offset: usize,
    weights: Vec<f64>,
}

impl ScoreLayout {
    fn of(schema: &FeatureSchema, name: &str) -> Result<Self> {
        let col = schema.index_of(name)?;
        let (offset, _) = schema.encoded_slot(col);
        match &schema.columns()[col].kind {
            ColumnKind::Continuous { .. } => Ok(ScoreLayout { offset, weights: vec![1.0] }),
            ColumnKind::Categorical { ranks: Some(r), .. } => Ok(ScoreLayout { offset, weights: r.clone() }),
            ColumnKind::Categorical { ranks: None, .. } => Err(Error::Config(format!(
                "'{name}' is categorical without a rank vector"
            ))),
        }
    }

    fn score(&self, v: &[f64]) -> f64 {
        self.weights.iter().enumerate().map(|(i, w)| w * v[self.offset + i]).sum()
    }

    fn record(&self, tape: &mut Tape, v: Var) -> Var {
        let n = tape.value(v).rows();
        let cols: Vec<usize> = (self.offset..self.offset + self.weights.len()).collect();
        let block = tape.select_cols(v, &cols);
        let w = Tensor::new(n, cols.len(), (0..n).flat_map(|_| self.weights.iter().copied()).collect())
            .expect("rank broadcast");
        let weighted = tape.mul_const(block, w);
        tape.sum_cols(weighted)
    }
}

/// A fitted monotonic line rewritten over scaled columns:
/// `residual = s_effect - (c0 + Σ c_i s_cause_i)`.
#[derive(Clone, Debug, PartialEq)]
struct ScaledLine {
    effect_column: usize,
    cause_columns: Vec<usize>,
    constant: f64,
    coefficients: Vec<f64>,
}

fn continuous_slot(schema: &FeatureSchema, name: &str) -> Result<(usize, f64, f64)> {
    let col = schema.index_of(name)?;
    match schema.columns()[col].kind {
        ColumnKind::Continuous { min, max } => Ok((schema.encoded_slot(col).0, min, max - min)),
        _ => Err(Error::Config(format!("monotonic feature '{name}' must be continuous"))),
    }
}

impl ScaledLine {
    fn of(schema: &FeatureSchema, c: &MonotonicConstraint) -> Result<Self> {
        let fit = c.fitted()?;
        let (effect_column, e_min, e_width) = continuous_slot(schema, &c.effect)?;
        let mut constant = fit.intercept;
        let mut coefficients = Vec::new();
        let mut cause_columns = Vec::new();
        for (name, b) in c.causes.iter().zip(&fit.slopes) {
            let (off, min, width) = continuous_slot(schema, name)?;
            constant += b * min;
            coefficients.push(b * width / e_width);
            cause_columns.push(off);
        }
        Ok(ScaledLine {
            effect_column,
            cause_columns,
            constant: (constant - e_min) / e_width,
            coefficients,
        })
    }

    fn residual(&self, v: &[f64]) -> f64 {
        let pred = self.constant
            + self
                .coefficients
                .iter()
                .zip(&self.cause_columns)
                .map(|(c, &j)| c * v[j])
                .sum::<f64>();
        v[self.effect_column] - pred
    }

    fn record(&self, tape: &mut Tape, xcf: Var) -> Var {
        let n = tape.value(xcf).rows();
        let causes = tape.select_cols(xcf, &self.cause_columns);
        let w = Tensor::new(
            n,
            self.coefficients.len(),
            (0..n).flat_map(|_| self.coefficients.iter().copied()).collect(),
        )
        .expect("coefficient broadcast");
        let weighted = tape.mul_const(causes, w);
        let summed = tape.sum_cols(weighted);
        let pred = tape.affine(summed, 1.0, self.constant);
        let own = tape.select_col(xcf, self.effect_column);
        let r = tape.sub(own, pred);
        tape.abs(r)
    }
}

/// `|x_cf_effect - line(x_cf_causes)|` on scaled features.
pub fn monotonic_penalty(schema: &FeatureSchema, xcf: &[f64], c: &MonotonicConstraint) -> Result<f64> {
    Ok(ScaledLine::of(schema, c)?.residual(xcf).abs())
}

/// Unary hinge on encoded vectors (scaled value or rank-weighted block).
pub fn unary_penalty(schema: &FeatureSchema, x: &[f64], xcf: &[f64], c: &UnaryConstraint) -> Result<f64> {
    let l = ScoreLayout::of(schema, &c.feature)?;
    Ok(unary_hinge(l.score(x), l.score(xcf), c.direction))
}

/// Weighted sum of unary and monotonic penalties, added to the l1 objective.
#[derive(Clone, Debug)]
pub struct ConstraintPenalties {
    unary: Vec<(ScoreLayout, Direction)>,
    lines: Vec<ScaledLine>,
    pub weight: f64,
}

impl ConstraintPenalties {
    pub fn new(
        schema: &FeatureSchema,
        unary: &[UnaryConstraint],
        monotonic: &[MonotonicConstraint],
        weight: f64,
    ) -> Result<Self> {
        if !(weight >= 0.0) {
            return Err(Error::Config("feasibility weight must be nonnegative".into()));
        }
        Ok(ConstraintPenalties {
            unary: unary
                .iter()
                .map(|c| Ok((ScoreLayout::of(schema, &c.feature)?, c.direction)))
                .collect::<Result<_>>()?,
            lines: monotonic
                .iter()
                .map(|c| ScaledLine::of(schema, c))
                .collect::<Result<_>>()?,
            weight,
        })
    }

    /// Unweighted penalty sum for one pair.
    pub fn total(&self, x: &[f64], xcf: &[f64]) -> f64 {
        let u: f64 = self
            .unary
            .iter()
            .map(|(l, d)| unary_hinge(l.score(x), l.score(xcf), *d))
            .sum();
        let m: f64 = self.lines.iter().map(|l| l.residual(xcf).abs()).sum();
        u + m
    }

    /// Differentiable unweighted per-row penalty, `[n, 1]`, or `None` if
    /// there are no constraints.
    pub fn record(&self, tape: &mut Tape, x: Var, xcf: Var) -> Option<Var> {
        let mut acc: Option<Var> = None;
        let mut push = |tape: &mut Tape, v: Var| {
            acc = Some(match acc {
                Some(a) => tape.add(a, v),
                None => v,
            });
        };
        for (l, d) in &self.unary {
            let sx = l.record(tape, x);
            let scf = l.record(tape, xcf);
            let gap = match d {
                Direction::NonDecrease => tape.sub(sx, scf),
                Direction::NonIncrease => tape.sub(scf, sx),
            };
            let h = tape.relu(gap);
            push(tape, h);
        }
        for line in &self.lines {
            let r = line.record(tape, xcf);
            push(tape, r);
        }
        acc
    }
}

impl CfObjective for ConstraintPenalties {
    fn penalty(&self, tape: &mut Tape, x: Var, xcf: Var) -> Result<Option<Var>> {
        if self.weight == 0.0 {
            return Ok(None);
        }
        Ok(self.record(tape, x, xcf).map(|p| tape.scale(p, self.weight)))
    }
}
