//! Feasibility oracles, query sets, similarity fine-tuning and pairwise
//! constraint discovery.

mod discovery;
mod finetune;
mod queries;

use serde::{Deserialize, Serialize};

pub use discovery::{discover_constraints, ks_statistic, DiscoveredConstraint, DiscoveryConfig, MIN_PER_LABEL};
pub use finetune::{finetune, record_finetune_loss, record_label_term, similarity, FinetuneConfig};
pub use queries::{
    build_query_set, read_labels, write_labels, LabelRecord, LabeledQuery, Provenance, QuerySet,
};

use crate::data::{FeatureSchema, RawValue};
use crate::error::{Error, Result};
use crate::scm::Scm;

/// Tolerance for strict comparisons on decoded raw values.
pub const RAW_TOL: f64 = 1e-9;

/// Sign of a raw change under [`RAW_TOL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Change {
    Up,
    Down,
    Same,
}

pub fn change(before: f64, after: f64) -> Change {
    if after > before + RAW_TOL {
        Change::Up
    } else if after < before - RAW_TOL {
        Change::Down
    } else {
        Change::Same
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleSpec {
    /// Feasible iff the feature's ordinal score does not decrease (or
    /// increase, for `non-increase`).
    Unary {
        feature: String,
        #[serde(default = "default_direction")]
        direction: crate::feasibility::Direction,
    },
    /// Rank-scored feature `rank_feature` may not decrease; if it rises,
    /// `driver` must strictly rise; if unchanged, `driver` must not fall.
    MonotonicWithRank { rank_feature: String, driver: String },
    /// Feasible iff all causes strictly rise and the effect rises, or all
    /// causes strictly fall and the effect falls.
    Ite { causes: Vec<String>, effect: String },
    /// [`OracleSpec::Ite`] with the causes read from the SCM parents of `effect`.
    ScmMonotonic { effect: String },
    /// Labels come from a human label file; nothing is computed.
    LabelFile { path: String },
}

fn default_direction() -> crate::feasibility::Direction {
    crate::feasibility::Direction::NonDecrease
}

impl OracleSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OracleSpec::Unary { .. } => "unary",
            OracleSpec::MonotonicWithRank { .. } => "monotonic-with-rank",
            OracleSpec::Ite { .. } => "ite",
            OracleSpec::ScmMonotonic { .. } => "scm-monotonic",
            OracleSpec::LabelFile { .. } => "label-file",
        }
    }
}

/// A programmatic oracle bound to a schema.
#[derive(Clone, Debug, PartialEq)]
pub enum Oracle {
    Unary {
        column: usize,
        direction: crate::feasibility::Direction,
    },
    MonotonicWithRank {
        rank: usize,
        driver: usize,
    },
    Ite {
        causes: Vec<usize>,
        effect: usize,
    },
}

impl Oracle {
    /// Resolves a spec against the schema. `scm` is needed only for
    /// `scm-monotonic`; `label-file` has no programmatic oracle.
    pub fn new(spec: &OracleSpec, schema: &FeatureSchema, scm: Option<&Scm>) -> Result<Self> {
        let score_col = |name: &str| -> Result<usize> {
            let c = schema.index_of(name)?;
            schema.raw_score(c, &sample_value(schema, c)).map(|_| c)
        };
        match spec {
            OracleSpec::Unary { feature, direction } => Ok(Oracle::Unary {
                column: score_col(feature)?,
                direction: *direction,
            }),
            OracleSpec::MonotonicWithRank { rank_feature, driver } => Ok(Oracle::MonotonicWithRank {
                rank: score_col(rank_feature)?,
                driver: score_col(driver)?,
            }),
            OracleSpec::Ite { causes, effect } => {
                if causes.is_empty() {
                    return Err(Error::Config("ITE oracle needs at least one cause".into()));
                }
                Ok(Oracle::Ite {
                    causes: causes.iter().map(|c| score_col(c)).collect::<Result<_>>()?,
                    effect: score_col(effect)?,
                })
            }
            OracleSpec::ScmMonotonic { effect } => {
                let scm = scm.ok_or_else(|| Error::Config("scm-monotonic oracle needs an SCM".into()))?;
                let causes = scm.parents(effect)?;
                Oracle::new(
                    &OracleSpec::Ite {
                        causes,
                        effect: effect.clone(),
                    },
                    schema,
                    None,
                )
            }
            OracleSpec::LabelFile { .. } => Err(Error::Unsupported(
                "label-file oracles are answered by a human, not computed".into(),
            )),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Oracle::Unary { .. } => "unary",
            Oracle::MonotonicWithRank { .. } => "monotonic-with-rank",
            Oracle::Ite { .. } => "ite",
        }
    }

    /// Feasibility label for a decoded pair.
    pub fn label(&self, schema: &FeatureSchema, x: &[RawValue], cf: &[RawValue]) -> Result<u8> {
        let ch = |c: usize| -> Result<Change> {
            Ok(change(schema.raw_score(c, &x[c])?, schema.raw_score(c, &cf[c])?))
        };
        let ok = match self {
            Oracle::Unary { column, direction } => match direction {
                crate::feasibility::Direction::NonDecrease => ch(*column)? != Change::Down,
                crate::feasibility::Direction::NonIncrease => ch(*column)? != Change::Up,
            },
            Oracle::MonotonicWithRank { rank, driver } => match (ch(*rank)?, ch(*driver)?) {
                (Change::Up, Change::Up) => true,
                (Change::Up, _) => false,
                (Change::Same, d) => d != Change::Down,
                (Change::Down, _) => false,
            },
            Oracle::Ite { causes, effect } => {
                let moves = causes.iter().map(|&c| ch(c)).collect::<Result<Vec<_>>>()?;
                let e = ch(*effect)?;
                (moves.iter().all(|&m| m == Change::Up) && e == Change::Up)
                    || (moves.iter().all(|&m| m == Change::Down) && e == Change::Down)
            }
        };
        Ok(ok as u8)
    }

    /// Decodes both encoded vectors and labels the pair.
    pub fn label_encoded(&self, schema: &FeatureSchema, x: &[f64], cf: &[f64]) -> Result<u8> {
        self.label(schema, &schema.decode(x)?, &schema.decode(cf)?)
    }
}

fn sample_value(schema: &FeatureSchema, col: usize) -> RawValue {
    match &schema.columns()[col].kind {
        crate::data::ColumnKind::Continuous { min, .. } => RawValue::Num(*min),
        crate::data::ColumnKind::Categorical { categories, .. } => RawValue::Cat(categories[0].clone()),
    }
}
