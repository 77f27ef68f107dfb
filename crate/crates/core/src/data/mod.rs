//! Tabular ingestion, encoding, and dataset statistics.

mod schema;

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scm::SampleSet;

pub use schema::{
    education_ranks, ColumnDecl, ColumnKind, ColumnSpec, DeclaredKind, FeatureSchema, RangeMode,
    RawRow, RawValue, SchemaDecl,
};
pub(crate) use schema::argmax;

/// Zero MAD values are replaced by this floor.
pub const MAD_FLOOR: f64 = 1e-4;

/// Raw rows plus their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let columns = rdr.headers()?.iter().map(str::to_string).collect::<Vec<_>>();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(RawTable { columns, rows })
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("CSV has no column '{name}'")))
    }
}

/// A fitted dataset: schema, encoded features, class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub raw: Vec<RawRow>,
    pub encoded: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            raw: idx.iter().map(|&i| self.raw[i].clone()).collect(),
            encoded: idx.iter().map(|&i| self.encoded[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes.clone(),
        }
    }

    /// Builds a dataset from an SCM sample with an all-continuous schema.
    pub fn from_samples(samples: &SampleSet) -> Result<Dataset> {
        let d = samples.feature_names.len();
        let mut columns = Vec::with_capacity(d);
        for (j, name) in samples.feature_names.iter().enumerate() {
            let (lo, hi) = extent(samples.features.iter().map(|r| r[j]));
            columns.push(ColumnSpec {
                name: name.clone(),
                kind: ColumnKind::Continuous { min: lo, max: hi },
            });
        }
        let schema = FeatureSchema::new(columns)?;
        let raw: Vec<RawRow> = samples
            .features
            .iter()
            .map(|r| r.iter().map(|&v| RawValue::Num(v)).collect())
            .collect();
        let encoded = raw
            .iter()
            .map(|r| schema.encode(r, RangeMode::Strict))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            schema,
            raw,
            encoded,
            labels: samples.outcomes.iter().map(|&y| y as usize).collect(),
            classes: vec!["0".into(), "1".into()],
        })
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        hi = lo + 1.0;
    }
    (lo, hi)
}

fn parse_num(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            message: format!("'{cell}' is not a finite number"),
        })
}

/// Fits min/max and category lists from the table.
///
/// Categories keep first-appearance order. Rows are 1-based in parse errors.
pub fn fit_schema(table: &RawTable, decl: &SchemaDecl) -> Result<FeatureSchema> {
    if table.rows.is_empty() {
        return Err(Error::InsufficientData("table has no rows".into()));
    }
    let mut columns = Vec::with_capacity(decl.columns.len());
    for c in &decl.columns {
        let j = table.col(&c.name)?;
        let kind = match c.kind {
            DeclaredKind::Continuous => {
                let mut vals = Vec::with_capacity(table.rows.len());
                for (i, r) in table.rows.iter().enumerate() {
                    vals.push(parse_num(&r[j], i + 1, &c.name)?);
                }
                let (min, max) = extent(vals.into_iter());
                ColumnKind::Continuous { min, max }
            }
            DeclaredKind::Categorical => {
                let mut categories: Vec<String> = Vec::new();
                for r in &table.rows {
                    if !categories.contains(&r[j]) {
                        categories.push(r[j].clone());
                    }
                }
                let ranks = match &c.ranks {
                    None => None,
                    Some(map) => Some(
                        categories
                            .iter()
                            .map(|k| {
                                map.get(k).copied().ok_or_else(|| {
                                    Error::Config(format!(
                                        "column '{}': no rank for category '{k}'",
                                        c.name
                                    ))
                                })
                            })
                            .collect::<Result<Vec<_>>>()?,
                    ),
                };
                ColumnKind::Categorical { categories, ranks }
            }
        };
        columns.push(ColumnSpec {
            name: c.name.clone(),
            kind,
        });
    }
    FeatureSchema::new(columns)
}

/// Parses table rows against a fitted schema.
pub fn parse_rows(table: &RawTable, schema: &FeatureSchema) -> Result<Vec<RawRow>> {
    let idx = schema
        .columns()
        .iter()
        .map(|c| table.col(&c.name))
        .collect::<Result<Vec<_>>>()?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            schema
                .columns()
                .iter()
                .zip(&idx)
                .map(|(c, &j)| match c.kind {
                    ColumnKind::Continuous { .. } => {
                        parse_num(&r[j], i + 1, &c.name).map(RawValue::Num)
                    }
                    ColumnKind::Categorical { .. } => Ok(RawValue::Cat(r[j].clone())),
                })
                .collect()
        })
        .collect()
}

/// Fits the schema, encodes every row, and maps the target column to class
/// indices (explicit order if declared, sorted otherwise).
pub fn load_dataset(table: &RawTable, decl: &SchemaDecl) -> Result<Dataset> {
    let schema = fit_schema(table, decl)?;
    let raw = parse_rows(table, &schema)?;
    let t = table.col(&decl.target)?;
    let classes = match &decl.classes {
        Some(c) => c.clone(),
        None => {
            let set: std::collections::BTreeSet<&String> = table.rows.iter().map(|r| &r[t]).collect();
            set.into_iter().cloned().collect()
        }
    };
    let labels = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            classes.iter().position(|c| c == &r[t]).ok_or_else(|| Error::Parse {
                row: i + 1,
                column: decl.target.clone(),
                message: format!("unknown class '{}'", r[t]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let encoded = raw
        .iter()
        .map(|r| schema.encode(r, RangeMode::Strict))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        schema,
        raw,
        encoded,
        labels,
        classes,
    })
}

/// Per-column median absolute deviation in raw units, keyed by column name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MadStats {
    pub values: BTreeMap<String, f64>,
}

impl MadStats {
    pub fn get(&self, name: &str) -> Result<f64> {
        self.values
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("no MAD for column '{name}'")))
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation of one sample, without the floor.
pub fn mad_of(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// MAD of every continuous column, floored at [`MAD_FLOOR`].
pub fn mad(rows: &[RawRow], schema: &FeatureSchema) -> Result<MadStats> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("MAD needs at least one row".into()));
    }
    let mut values = BTreeMap::new();
    for j in schema.continuous_columns() {
        let col: Vec<f64> = rows
            .iter()
            .map(|r| {
                r[j].as_num()
                    .ok_or_else(|| Error::Config("non-numeric continuous cell".into()))
            })
            .collect::<Result<_>>()?;
        let m = mad_of(&col);
        values.insert(
            schema.columns()[j].name.clone(),
            if m > 0.0 { m } else { MAD_FLOOR },
        );
    }
    Ok(MadStats { values })
}

/// Keeps `(age > 35 and y = 0) or (age < 45 and y = 1)`.
pub fn adult_filter(ages: &[f64], labels: &[usize]) -> Vec<usize> {
    ages.iter()
        .zip(labels)
        .enumerate()
        .filter(|(_, (&a, &y))| (a > 35.0 && y == 0) || (a < 45.0 && y == 1))
        .map(|(i, _)| i)
        .collect()
}

/// Applies [`adult_filter`] to a dataset; `age_column` must be continuous.
pub fn adult_filter_dataset(data: &Dataset, age_column: &str) -> Result<Dataset> {
    let j = data.schema.index_of(age_column)?;
    let ages = data
        .raw
        .iter()
        .map(|r| r[j].as_num().ok_or_else(|| Error::Config("age must be numeric".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(data.subset(&adult_filter(&ages, &data.labels)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then an 80/10/10 cut (`floor(0.8n)`, `floor(0.1n)`, rest).
pub fn split(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 10 {
        return Err(Error::InsufficientData(format!("split needs n >= 10, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = idx.split_off(n_train + n_val);
    let validation = idx.split_off(n_train);
    Ok(SplitIndices {
        train: idx,
        validation,
        test,
    })
}
