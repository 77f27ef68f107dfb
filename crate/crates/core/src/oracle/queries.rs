use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::data::{FeatureSchema, RawValue};
use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::rng;
use crate::vae::{flip_targets, CfVae};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Oracle { name: String },
    Human,
}

/// An input, a candidate counterfactual, and (once answered) its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query_id: u64,
    pub x: Vec<f64>,
    pub cf: Vec<f64>,
    pub target: usize,
    pub label: Option<u8>,
    pub provenance: Option<Provenance>,
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub queries: Vec<LabeledQuery>,
    pub fraction: f64,
    pub per_input: usize,
    pub seed: u64,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn labeled(&self) -> Vec<&LabeledQuery> {
        self.queries.iter().filter(|q| q.label.is_some()).collect()
    }

    /// `n` labeled queries taken round-robin over inputs: the first labeled
    /// candidate of every input, then the second, and so on.
    pub fn budget(&self, n: usize) -> QuerySet {
        let mut groups: Vec<Vec<&LabeledQuery>> = Vec::new();
        for q in self.queries.iter().filter(|q| q.label.is_some()) {
            match groups.iter_mut().find(|g| g[0].x == q.x) {
                Some(g) => g.push(q),
                None => groups.push(vec![q]),
            }
        }
        let depth = groups.iter().map(Vec::len).max().unwrap_or(0);
        let queries = (0..depth)
            .flat_map(|r| groups.iter().filter_map(move |g| g.get(r)))
            .take(n)
            .map(|q| (*q).clone())
            .collect();
        QuerySet {
            queries,
            ..self.clone()
        }
    }

    /// Copies labels from records onto matching query ids.
    pub fn apply_labels(&mut self, records: &[LabelRecord]) -> Result<()> {
        let by_id: BTreeMap<u64, &LabelRecord> = records.iter().map(|r| (r.query_id, r)).collect();
        for q in &mut self.queries {
            if let Some(r) = by_id.get(&q.query_id) {
                if r.label > 1 {
                    return Err(Error::Config(format!("label {} is not binary", r.label)));
                }
                q.label = Some(r.label);
                q.provenance = Some(r.provenance.clone());
                q.timestamp = r.timestamp;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("query set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Samples `floor(fraction * n)` inputs, generates `per_input` candidates for
/// each, and labels them with `oracle` when one is given.
#[allow(clippy::too_many_arguments)]
pub fn build_query_set(
    vae: &CfVae,
    classifier: &Classifier,
    schema: &FeatureSchema,
    rows: &[Vec<f64>],
    fraction: f64,
    per_input: usize,
    oracle: Option<&Oracle>,
    seed: u64,
) -> Result<QuerySet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("query fraction {fraction} outside (0, 1]")));
    }
    let m = (fraction * rows.len() as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.shuffle(&mut rng::derive(seed, 20));
    idx.truncate(m);
    let chosen: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
    let targets = flip_targets(classifier, &chosen)?;
    let cfs = vae.generate_batch(&chosen, &targets, per_input, &mut rng::derive(seed, 21))?;
    let provenance = oracle.map(|o| Provenance::Oracle {
        name: o.kind_name().into(),
    });
    let mut queries = Vec::with_capacity(cfs.len());
    for (j, cf) in cfs.into_iter().enumerate() {
        let i = j / per_input;
        let label = match oracle {
            Some(o) => Some(o.label_encoded(schema, &chosen[i], &cf)?),
            None => None,
        };
        queries.push(LabeledQuery {
            query_id: j as u64,
            x: chosen[i].clone(),
            cf,
            target: targets[i],
            label,
            provenance: provenance.clone(),
            timestamp: 0,
        });
    }
    Ok(QuerySet {
        queries,
        fraction,
        per_input,
        seed,
    })
}

/// One line of the label file: decoded rows keyed by column name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub query_id: u64,
    pub x: BTreeMap<String, RawValue>,
    pub cf: BTreeMap<String, RawValue>,
    pub label: u8,
    pub provenance: Provenance,
    pub timestamp: u64,
}

impl LabelRecord {
    pub fn from_query(schema: &FeatureSchema, q: &LabeledQuery, label: u8, provenance: Provenance, timestamp: u64) -> Result<Self> {
        let named = |v: &[f64]| -> Result<BTreeMap<String, RawValue>> {
            Ok(schema.names().into_iter().zip(schema.decode(v)?).collect())
        };
        Ok(LabelRecord {
            query_id: q.query_id,
            x: named(&q.x)?,
            cf: named(&q.cf)?,
            label,
            provenance,
            timestamp,
        })
    }
}

pub fn write_labels<W: Write>(mut out: W, records: &[LabelRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(out, "{line}").map_err(|e| Error::io("label file", e))?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(input: R) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("label file", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: LabelRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: i + 1,
            column: "label record".into(),
            message: e.to_string(),
        })?;
        if r.label > 1 {
            return Err(Error::Parse {
                row: i + 1,
                column: "label".into(),
                message: format!("label {} is not binary", r.label),
            });
        }
        out.push(r);
    }
    Ok(out)
}
