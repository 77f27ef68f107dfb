//! Artifact directory shared by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use feasible_cf::classifier::Classifier;
use feasible_cf::data::{mad, Dataset, FeatureSchema, MadStats, RangeMode, RawRow, SplitIndices};
use feasible_cf::feasibility::ConstraintFile;
use feasible_cf::scm::Scm;
use feasible_cf::vae::CfVae;

use crate::error::{CliError, Result};

pub const SAMPLES: &str = "samples.csv";
pub const DATASET: &str = "dataset.json";
pub const SCHEMA: &str = "schema.json";
pub const SCM: &str = "scm.json";
pub const CONSTRAINTS: &str = "constraints.json";
pub const CLASSIFIER: &str = "classifier.ckpt";
pub const QUERIES: &str = "queries.json";
pub const LABELS: &str = "labels.jsonl";
pub const DISCOVERY: &str = "discovery.json";

pub fn vae_file(method: &str) -> String {
    format!("vae-{method}.ckpt")
}

pub fn cfs_csv(name: &str) -> String {
    format!("cfs-{name}.csv")
}

pub fn cfs_jsonl(name: &str) -> String {
    format!("cfs-{name}.jsonl")
}

pub fn metrics_file(name: &str) -> String {
    format!("metrics-{name}.json")
}

/// Rows, labels and split of the working dataset; the schema lives in its own file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetArtifact {
    pub source: String,
    pub seed: u64,
    pub classes: Vec<String>,
    pub labels: Vec<usize>,
    pub raw: Vec<RawRow>,
    pub split: SplitIndices,
}

/// Machine-readable record written by every subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

/// SHA-256 of the compact, key-sorted JSON form of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let text = serde_json::to_string(&serde_json::to_value(config)?)?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

/// The loaded dataset with its split and training-split MAD.
pub struct Loaded {
    pub artifact: DatasetArtifact,
    pub data: Dataset,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub mad: MadStats,
}

impl Loaded {
    pub fn split(&self, name: &str) -> Result<&Dataset> {
        match name {
            "train" => Ok(&self.train),
            "validation" => Ok(&self.validation),
            "test" => Ok(&self.test),
            other => Err(CliError::Usage(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Workspace { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    /// Path of `name`, or a dependency error naming the subcommand that writes it.
    pub fn require(&self, name: &str, command: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Missing {
                artifact: name.into(),
                command: command.into(),
            })
        }
    }

    pub fn read_text(&self, name: &str, command: &str) -> Result<String> {
        let p = self.require(name, command)?;
        fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, command: &str) -> Result<T> {
        Ok(serde_json::from_str(&self.read_text(name, command)?)?)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_manifest<C: Serialize>(
        &self,
        command: &str,
        seed: u64,
        config: &C,
        artifacts: &[String],
        summary: serde_json::Value,
    ) -> Result<Manifest> {
        let manifest = Manifest {
            command: command.into(),
            seed,
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
            artifacts: artifacts.to_vec(),
            summary,
        };
        self.write_json(&format!("manifest-{command}.json"), &manifest)?;
        Ok(manifest)
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        Ok(FeatureSchema::from_json(&self.read_text(SCHEMA, "simulate")?)?)
    }

    pub fn load_data(&self) -> Result<Loaded> {
        let schema = self.schema()?;
        let artifact: DatasetArtifact = self.read_json(DATASET, "simulate")?;
        let encoded = artifact
            .raw
            .iter()
            .map(|r| schema.encode(r, RangeMode::Strict))
            .collect::<feasible_cf::Result<Vec<_>>>()?;
        let data = Dataset {
            schema,
            raw: artifact.raw.clone(),
            encoded,
            labels: artifact.labels.clone(),
            classes: artifact.classes.clone(),
        };
        let train = data.subset(&artifact.split.train);
        let mad = mad(&train.raw, &data.schema)?;
        Ok(Loaded {
            validation: data.subset(&artifact.split.validation),
            test: data.subset(&artifact.split.test),
            train,
            mad,
            data,
            artifact,
        })
    }

    pub fn scm(&self) -> Result<Option<Scm>> {
        if !self.exists(SCM) {
            return Ok(None);
        }
        Ok(Some(Scm::from_json(&self.read_text(SCM, "simulate")?)?))
    }

    pub fn constraints(&self) -> Result<Option<ConstraintFile>> {
        if !self.exists(CONSTRAINTS) {
            return Ok(None);
        }
        Ok(Some(ConstraintFile::from_json(&self.read_text(CONSTRAINTS, "simulate")?)?))
    }

    pub fn classifier(&self) -> Result<Classifier> {
        Ok(Classifier::load(&self.require(CLASSIFIER, "train-classifier")?)?)
    }

    pub fn vae(&self, method: &str) -> Result<CfVae> {
        let command = match method {
            "example-based" => "finetune".to_string(),
            m => format!("train-cf --method {m}"),
        };
        Ok(CfVae::load(&self.require(&vae_file(method), &command)?)?)
    }
}
