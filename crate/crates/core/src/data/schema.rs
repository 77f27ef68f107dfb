use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A raw (unencoded) cell value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Num(f64),
    Cat(String),
}

impl RawValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            RawValue::Num(v) => Some(*v),
            RawValue::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            RawValue::Cat(s) => Some(s),
            RawValue::Num(_) => None,
        }
    }
}

impl std::fmt::Display for RawValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RawValue::Num(v) => write!(f, "{v}"),
            RawValue::Cat(s) => f.write_str(s),
        }
    }
}

/// A row in schema column order.
pub type RawRow = Vec<RawValue>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous {
        min: f64,
        max: f64,
    },
    Categorical {
        categories: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ranks: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// How out-of-range continuous values are treated by [`FeatureSchema::encode`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RangeMode {
    /// Ingestion: reject.
    Strict,
    /// Generation: clamp with a warning.
    Clamp,
}

/// Ordered feature columns plus their encoding.
///
/// The encoded vector holds every continuous column min-max scaled (in schema
/// order) followed by one one-hot block per categorical column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaColumns")]
pub struct FeatureSchema {
    columns: Vec<ColumnSpec>,
    #[serde(skip)]
    layout: Vec<Slot>,
}

#[derive(Deserialize)]
struct SchemaColumns {
    columns: Vec<ColumnSpec>,
}

impl TryFrom<SchemaColumns> for FeatureSchema {
    type Error = Error;

    fn try_from(c: SchemaColumns) -> Result<Self> {
        FeatureSchema::new(c.columns)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
struct Slot {
    offset: usize,
    width: usize,
}

impl FeatureSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate column '{}'", c.name)));
            }
            match &c.kind {
                ColumnKind::Continuous { min, max } => {
                    if !(min < max) {
                        return Err(Error::Config(format!(
                            "column '{}': min {min} must be below max {max}",
                            c.name
                        )));
                    }
                }
                ColumnKind::Categorical { categories, ranks } => {
                    let uniq: std::collections::BTreeSet<_> = categories.iter().collect();
                    if uniq.len() != categories.len() || categories.is_empty() {
                        return Err(Error::Config(format!(
                            "column '{}': categories must be nonempty and unique",
                            c.name
                        )));
                    }
                    if ranks.as_ref().is_some_and(|r| r.len() != categories.len()) {
                        return Err(Error::Config(format!(
                            "column '{}': rank vector needs one entry per category",
                            c.name
                        )));
                    }
                }
            }
        }
        let mut schema = FeatureSchema {
            columns,
            layout: Vec::new(),
        };
        schema.build_layout();
        Ok(schema)
    }

    fn build_layout(&mut self) {
        let mut layout = vec![Slot::default(); self.columns.len()];
        let mut offset = 0;
        for (i, c) in self.columns.iter().enumerate() {
            if let ColumnKind::Continuous { .. } = c.kind {
                layout[i] = Slot { offset, width: 1 };
                offset += 1;
            }
        }
        for (i, c) in self.columns.iter().enumerate() {
            if let ColumnKind::Categorical { categories, .. } = &c.kind {
                layout[i] = Slot {
                    offset,
                    width: categories.len(),
                };
                offset += categories.len();
            }
        }
        self.layout = layout;
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("schema has no column '{name}'")))
    }

    pub fn column(&self, name: &str) -> Result<&ColumnSpec> {
        Ok(&self.columns[self.index_of(name)?])
    }

    pub fn encoded_width(&self) -> usize {
        self.layout.iter().map(|s| s.width).sum()
    }

    /// `(offset, width)` of a column inside the encoded vector.
    pub fn encoded_slot(&self, col: usize) -> (usize, usize) {
        let s = self.layout[col];
        (s.offset, s.width)
    }

    pub fn continuous_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| matches!(self.columns[i].kind, ColumnKind::Continuous { .. }))
            .collect()
    }

    pub fn categorical_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| matches!(self.columns[i].kind, ColumnKind::Categorical { .. }))
            .collect()
    }

    /// Scaled position of a raw continuous value.
    pub fn scale(&self, col: usize, raw: f64) -> f64 {
        match self.columns[col].kind {
            ColumnKind::Continuous { min, max } => (raw - min) / (max - min),
            _ => panic!("scale on categorical column"),
        }
    }

    /// Inverse of [`FeatureSchema::scale`] (no clamping).
    pub fn unscale(&self, col: usize, scaled: f64) -> f64 {
        match self.columns[col].kind {
            ColumnKind::Continuous { min, max } => min + scaled * (max - min),
            _ => panic!("unscale on categorical column"),
        }
    }

    /// Raw range width `max - min` of a continuous column.
    pub fn range_width(&self, col: usize) -> f64 {
        match self.columns[col].kind {
            ColumnKind::Continuous { min, max } => max - min,
            _ => panic!("range_width on categorical column"),
        }
    }

    pub fn encode(&self, row: &[RawValue], mode: RangeMode) -> Result<Vec<f64>> {
        if row.len() != self.columns.len() {
            return Err(Error::dim("raw row", self.columns.len(), row.len()));
        }
        let mut out = vec![0.0; self.encoded_width()];
        for (i, (c, v)) in self.columns.iter().zip(row).enumerate() {
            let slot = self.layout[i];
            match (&c.kind, v) {
                (ColumnKind::Continuous { min, max }, RawValue::Num(x)) => {
                    let mut x = *x;
                    if !(x >= *min && x <= *max) {
                        match mode {
                            RangeMode::Strict => {
                                return Err(Error::Range {
                                    column: c.name.clone(),
                                    value: x,
                                    min: *min,
                                    max: *max,
                                })
                            }
                            RangeMode::Clamp => {
                                warn!("clamping {} = {x} into [{min}, {max}]", c.name);
                                x = x.clamp(*min, *max);
                            }
                        }
                    }
                    out[slot.offset] = (x - min) / (max - min);
                }
                (ColumnKind::Categorical { categories, .. }, RawValue::Cat(s)) => {
                    let k = categories.iter().position(|c| c == s).ok_or_else(|| {
                        Error::Config(format!("column '{}': unknown category '{s}'", c.name))
                    })?;
                    out[slot.offset + k] = 1.0;
                }
                _ => {
                    return Err(Error::Config(format!(
                        "column '{}': value '{v}' has the wrong kind",
                        c.name
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Continuous entries are clamped to `[0, 1]` before unscaling; one-hot
    /// blocks decode to their argmax (lowest index on ties).
    pub fn decode(&self, encoded: &[f64]) -> Result<RawRow> {
        if encoded.len() != self.encoded_width() {
            return Err(Error::dim("encoded vector", self.encoded_width(), encoded.len()));
        }
        Ok(self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let slot = self.layout[i];
                match &c.kind {
                    ColumnKind::Continuous { min, max } => {
                        let s = encoded[slot.offset].clamp(0.0, 1.0);
                        RawValue::Num(min + s * (max - min))
                    }
                    ColumnKind::Categorical { categories, .. } => {
                        let block = &encoded[slot.offset..slot.offset + slot.width];
                        RawValue::Cat(categories[argmax(block)].clone())
                    }
                }
            })
            .collect())
    }

    /// Ordinal score of a feature in the encoded space: the scaled value for
    /// continuous columns, the rank-weighted sum of the block for ranked
    /// categoricals.
    pub fn encoded_score(&self, col: usize, encoded: &[f64]) -> Result<f64> {
        let slot = self.layout[col];
        match &self.columns[col].kind {
            ColumnKind::Continuous { .. } => Ok(encoded[slot.offset]),
            ColumnKind::Categorical { ranks: Some(r), .. } => Ok(encoded
                [slot.offset..slot.offset + slot.width]
                .iter()
                .zip(r)
                .map(|(p, r)| p * r)
                .sum()),
            ColumnKind::Categorical { ranks: None, .. } => Err(Error::Config(format!(
                "column '{}' is categorical without a rank vector",
                self.columns[col].name
            ))),
        }
    }

    /// Ordinal score of a raw value: the value itself or its category rank.
    pub fn raw_score(&self, col: usize, value: &RawValue) -> Result<f64> {
        match (&self.columns[col].kind, value) {
            (ColumnKind::Continuous { .. }, RawValue::Num(v)) => Ok(*v),
            (
                ColumnKind::Categorical {
                    categories,
                    ranks: Some(r),
                },
                RawValue::Cat(s),
            ) => categories
                .iter()
                .position(|c| c == s)
                .map(|k| r[k])
                .ok_or_else(|| Error::Config(format!("unknown category '{s}'"))),
            _ => Err(Error::Config(format!(
                "column '{}' has no ordinal score for '{value}'",
                self.columns[col].name
            ))),
        }
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Declared kind of a column before fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeclaredKind {
    Continuous,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub name: String,
    pub kind: DeclaredKind,
    /// Category -> rank, for ordinal categoricals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranks: Option<BTreeMap<String, f64>>,
}

/// Schema sidecar: column kinds, target column, optional class order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaDecl {
    pub columns: Vec<ColumnDecl>,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

impl SchemaDecl {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("decl serializes")
    }
}

/// Education rank vector used for the ordinal education constraint.
pub fn education_ranks() -> BTreeMap<String, f64> {
    [
        ("HS-grad", 0.0),
        ("School", 0.0),
        ("Bachelors", 1.0),
        ("Assoc", 1.0),
        ("Some-college", 1.0),
        ("Masters", 2.0),
        ("Prof-school", 3.0),
        ("Doctorate", 3.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}
