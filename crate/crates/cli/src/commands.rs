//! Pipeline subcommands. Each reads its prerequisites from the workspace,
//! writes its artifacts there, and records a manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use feasible_cf::baseline::{optimize_cf, DistanceKind, InstanceOptConfig};
use feasible_cf::classifier::{train_classifier, Classifier, ClassifierConfig};
use feasible_cf::data::{
    adult_filter_dataset, load_dataset, split, Dataset, FeatureSchema, RawTable, RawValue, SchemaDecl,
};
use feasible_cf::feasibility::{
    fit_monotonic_linear, train_model_approx, train_model_based, CausalProximity, CausalProximityConfig,
    ConstraintFile, ConstraintPenalties, MonotonicConstraint, Sign,
};
use feasible_cf::metrics::{evaluate, AutoencoderConfig, EvalContext, MetricsReport, PerClassAutoencoder};
use feasible_cf::oracle::{
    build_query_set, discover_constraints, finetune, read_labels, write_labels, DiscoveryConfig, FinetuneConfig,
    LabelRecord, Oracle, OracleSpec, QuerySet,
};
use feasible_cf::rng;
use feasible_cf::scm::{simple_bn_default, Scm};
use feasible_cf::vae::{flip_targets, train_base, CfVae, VaeTrainConfig};

use crate::error::{CliError, Result};
use crate::workspace::*;

#[derive(Debug, Parser)]
#[command(name = "fcf", version, about = "Feasible counterfactual explanations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a dataset from a structural causal model.
    Simulate(SimulateArgs),
    /// Load a CSV dataset with a schema sidecar.
    Ingest(IngestArgs),
    TrainClassifier(TrainClassifierArgs),
    /// Train a counterfactual generator.
    TrainCf(TrainCfArgs),
    /// Generate counterfactuals with a trained generator.
    Generate(GenerateArgs),
    /// Per-instance optimization baseline.
    BaselineGenerate(BaselineArgs),
    Evaluate(EvaluateArgs),
    /// Sample (input, counterfactual) queries for labeling.
    BuildQueries(BuildQueriesArgs),
    /// Fine-tune the base generator on feasibility labels.
    Finetune(FinetuneArgs),
    DiscoverConstraints(DiscoverArgs),
    /// Run the labeling HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// `simple-bn` or a path to an SCM JSON file.
    #[arg(long, default_value = "simple-bn")]
    pub scm: String,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Weight on endogenous terms of the causal proximity.
    #[arg(long, default_value_t = 55.0)]
    pub causal_weight: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Schema sidecar with column kinds and the target column.
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    /// Apply the age/label filter on this column.
    #[arg(long)]
    pub adult_filter: Option<String>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TrainClassifierArgs {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub hidden: usize,
    /// Defaults to the dataset seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Base,
    ModelBased,
    ModelApprox,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::ModelBased => "model-based",
            Method::ModelApprox => "model-approx",
        }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TrainCfArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Hinge margin; the default depends on the method.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Validity weight; the default depends on the method.
    #[arg(long)]
    pub validity_weight: Option<f64>,
    /// Overrides the causal weight of the constraint file.
    #[arg(long)]
    pub causal_weight: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub constraint_weight: f64,
    /// Constraint file; defaults to the workspace copy.
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    Base,
    ModelBased,
    ModelApprox,
    ExampleBased,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::Base => "base",
            Generator::ModelBased => "model-based",
            Generator::ModelApprox => "model-approx",
            Generator::ExampleBased => "example-based",
        }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = Generator::Base)]
    pub method: Generator,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Fixed target class; inputs already predicted as it are skipped.
    #[arg(long)]
    pub target_class: Option<usize>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    L1,
    Causal,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long, value_enum, default_value_t = Distance::L1)]
    pub distance: Distance,
    #[arg(long, default_value_t = 0.1)]
    pub weight: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 100)]
    pub limit: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricSet {
    /// Everything, including the autoencoder interpretability scores.
    All,
    Core,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Name of a counterfactual file: a generator name or `baseline-l1` / `baseline-causal`.
    #[arg(long, default_value = "base")]
    pub cfs: String,
    #[arg(long, value_enum, default_value_t = MetricSet::All)]
    pub metrics: MetricSet,
    /// Oracle spec (inline JSON or a file) scored as an extra constraint.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct BuildQueriesArgs {
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    #[arg(long, default_value_t = 10)]
    pub per_input: usize,
    /// Oracle spec (inline JSON or a file); without one the queries stay unlabeled.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct FinetuneOpts {
    #[arg(long = "ft-lr", default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long = "ft-epochs", default_value_t = 100)]
    pub epochs: usize,
    #[arg(long = "ft-batch", default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 2350.0)]
    pub oracle_weight: f64,
    /// Similarity kernel length scale.
    #[arg(long, default_value_t = 0.1)]
    pub bandwidth: f64,
    /// Disable per-class label reweighting.
    #[arg(long)]
    pub unbalanced: bool,
}

impl FinetuneOpts {
    pub fn config(&self, seed: u64) -> FinetuneConfig {
        let preset = FinetuneConfig::simple_bn(seed);
        FinetuneConfig {
            base: VaeTrainConfig {
                learning_rate: self.lr,
                epochs: self.epochs,
                batch_size: self.batch,
                ..preset.base
            },
            oracle_weight: self.oracle_weight,
            bandwidth: self.bandwidth,
            balance_labels: !self.unbalanced,
        }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct FinetuneArgs {
    /// Use at most this many labels, taken round-robin over inputs.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Label file; defaults to the workspace label file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub opts: FinetuneOpts,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct DiscoverArgs {
    /// Candidate pairs as `a:b`; all column pairs when omitted.
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub significance: f64,
    #[arg(long, default_value_t = 1000)]
    pub permutations: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, env = "FCF_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Test inputs scored by the metrics endpoint.
    #[arg(long, default_value_t = 200)]
    pub eval_inputs: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub opts: FinetuneOpts,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a).map(drop),
        Command::Ingest(a) => ingest(&a).map(drop),
        Command::TrainClassifier(a) => train_classifier_cmd(&a).map(drop),
        Command::TrainCf(a) => train_cf(&a).map(drop),
        Command::Generate(a) => generate(&a).map(drop),
        Command::BaselineGenerate(a) => baseline_generate(&a).map(drop),
        Command::Evaluate(a) => {
            let report = evaluate_cmd(&a)?;
            println!("{report}");
            Ok(())
        }
        Command::BuildQueries(a) => build_queries(&a).map(drop),
        Command::Finetune(a) => finetune_cmd(&a).map(drop),
        Command::DiscoverConstraints(a) => discover(&a).map(drop),
        Command::Serve(a) => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("tokio runtime", e))?;
            runtime.block_on(crate::service::serve(&a))
        }
    }
}

fn write_dataset(ws: &Workspace, data: &Dataset, source: String, seed: u64) -> Result<()> {
    ws.write_text(SCHEMA, &data.schema.to_json())?;
    ws.write_json(
        DATASET,
        &DatasetArtifact {
            source,
            seed,
            classes: data.classes.clone(),
            labels: data.labels.clone(),
            raw: data.raw.clone(),
            split: split(data.len(), seed)?,
        },
    )
}

pub fn simulate(a: &SimulateArgs) -> Result<Manifest> {
    let ws = Workspace::create(&a.out)?;
    let simple = a.scm == "simple-bn";
    let scm = if simple {
        simple_bn_default().scm()?
    } else {
        Scm::load(Path::new(&a.scm))?
    };
    let samples = scm.sample(a.n, a.seed)?;
    let mut csv = Vec::new();
    samples.write_csv(&mut csv)?;
    ws.write_text(SAMPLES, &String::from_utf8(csv).expect("csv is utf-8"))?;
    write_dataset(&ws, &Dataset::from_samples(&samples)?, format!("scm:{}", a.scm), a.seed)?;
    ws.write_text(SCM, &scm.to_json())?;
    let monotonic = if simple {
        vec![MonotonicConstraint::new(vec!["x1".into(), "x2".into()], "x3", Sign::Increasing)]
    } else {
        Vec::new()
    };
    let constraints = ConstraintFile {
        unary: Vec::new(),
        monotonic,
        causal: Some(CausalProximityConfig::from_scm(&scm, a.causal_weight)),
    };
    ws.write_text(CONSTRAINTS, &constraints.to_json())?;
    info!("sampled {} rows into {}", samples.len(), ws.root().display());
    let artifacts = names(&[SAMPLES, SCHEMA, DATASET, SCM, CONSTRAINTS]);
    ws.write_manifest("simulate", a.seed, a, &artifacts, json!({ "rows": samples.len() }))
}

pub fn ingest(a: &IngestArgs) -> Result<Manifest> {
    let ws = Workspace::create(&a.out)?;
    let table = RawTable::from_csv_path(&a.csv)?;
    let decl_text = std::fs::read_to_string(&a.schema).map_err(|e| CliError::io(&a.schema, e))?;
    let mut data = load_dataset(&table, &SchemaDecl::from_json(&decl_text)?)?;
    if let Some(age) = &a.adult_filter {
        data = adult_filter_dataset(&data, age)?;
    }
    write_dataset(&ws, &data, format!("csv:{}", a.csv.display()), a.seed)?;
    let mut artifacts = names(&[SCHEMA, DATASET]);
    if let Some(path) = &a.constraints {
        ws.write_text(CONSTRAINTS, &ConstraintFile::load(path)?.to_json())?;
        artifacts.push(CONSTRAINTS.into());
    }
    ws.write_manifest("ingest", a.seed, a, &artifacts, json!({ "rows": data.len() }))
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

pub fn train_classifier_cmd(a: &TrainClassifierArgs) -> Result<Manifest> {
    let ws = Workspace::create(&a.out)?;
    let l = ws.load_data()?;
    let seed = a.seed.unwrap_or(l.artifact.seed);
    let config = ClassifierConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        hidden: a.hidden,
        seed,
    };
    let clf = train_classifier(
        &l.train.encoded,
        &l.train.labels,
        l.data.classes.len(),
        Some((&l.validation.encoded, &l.validation.labels)),
        &config,
    )?;
    clf.save(&ws.path(CLASSIFIER))?;
    let accuracy = clf.accuracy(&l.test.encoded, &l.test.labels)?;
    info!("classifier test accuracy {accuracy:.4}");
    ws.write_manifest(
        "train-classifier",
        seed,
        &config,
        &names(&[CLASSIFIER]),
        json!({ "test_accuracy": accuracy }),
    )
}

fn load_constraints(ws: &Workspace, path: Option<&Path>) -> Result<ConstraintFile> {
    match path {
        Some(p) => Ok(ConstraintFile::load(p)?),
        None => ws.constraints()?.ok_or_else(|| CliError::Missing {
            artifact: CONSTRAINTS.into(),
            command: "simulate".into(),
        }),
    }
}

fn require_scm(ws: &Workspace) -> Result<Scm> {
    ws.scm()?.ok_or_else(|| CliError::Missing {
        artifact: SCM.into(),
        command: "simulate".into(),
    })
}

#[derive(Serialize)]
struct TrainCfConfig<'a> {
    method: Method,
    vae: &'a VaeTrainConfig,
    causal: Option<&'a CausalProximityConfig>,
    constraints: Option<&'a ConstraintFile>,
    constraint_weight: f64,
}

pub fn train_cf(a: &TrainCfArgs) -> Result<Manifest> {
    let ws = Workspace::create(&a.out)?;
    let l = ws.load_data()?;
    let clf = ws.classifier()?;
    let seed = a.seed.unwrap_or(l.artifact.seed);
    let (margin, validity) = match a.method {
        Method::Base => (0.15, 150.0),
        Method::ModelBased => (0.015, 85.0),
        Method::ModelApprox => (0.087, 96.0),
    };
    let config = VaeTrainConfig {
        margin: a.margin.unwrap_or(margin),
        validity_weight: a.validity_weight.unwrap_or(validity),
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed,
        ..VaeTrainConfig::default()
    };
    let schema = &l.data.schema;
    let mut vae = CfVae::init(schema.encoded_width(), l.data.classes.len(), seed)?;
    let rows = &l.train.encoded;
    let mut causal_config = None;
    let mut constraint_file = None;
    let trace = match a.method {
        Method::Base => train_base(&mut vae, &clf, rows, &config)?,
        Method::ModelBased => {
            let scm = require_scm(&ws)?;
            let file = ws.constraints()?;
            let mut c = file
                .and_then(|f| f.causal)
                .unwrap_or_else(|| CausalProximityConfig::from_scm(&scm, 55.0));
            if let Some(w) = a.causal_weight {
                c.weight = w;
            }
            let proximity = CausalProximity::new(schema, &scm, c.clone())?;
            causal_config = Some(c);
            train_model_based(&mut vae, &clf, rows, &config, &proximity)?
        }
        Method::ModelApprox => {
            let file = load_constraints(&ws, a.constraints.as_deref())?;
            if file.unary.is_empty() && file.monotonic.is_empty() {
                return Err(CliError::Usage("constraint file declares no unary or monotonic constraints".into()));
            }
            let fitted = file
                .monotonic
                .iter()
                .map(|c| fit_monotonic_linear(&l.train, c))
                .collect::<feasible_cf::Result<Vec<_>>>()?;
            let penalties = ConstraintPenalties::new(schema, &file.unary, &fitted, a.constraint_weight)?;
            constraint_file = Some(ConstraintFile {
                monotonic: fitted,
                ..file
            });
            train_model_approx(&mut vae, &clf, rows, &config, &penalties)?
        }
    };
    let name = vae_file(a.method.name());
    vae.save(&ws.path(&name))?;
    let manifest_config = TrainCfConfig {
        method: a.method,
        vae: &config,
        causal: causal_config.as_ref(),
        constraints: constraint_file.as_ref(),
        constraint_weight: a.constraint_weight,
    };
    ws.write_manifest(
        &format!("train-cf-{}", a.method.name()),
        seed,
        &manifest_config,
        &[name],
        json!({ "final_loss": trace.epoch_losses.last() }),
    )
}

/// One generated counterfactual, encoded, with classifier scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfRecord {
    pub input: usize,
    pub candidate: usize,
    pub target: usize,
    pub x: Vec<f64>,
    pub cf: Vec<f64>,
    pub x_scores: Vec<f64>,
    pub cf_scores: Vec<f64>,
}

fn cell(v: &RawValue) -> String {
    match v {
        RawValue::Num(x) => format!("{x}"),
        RawValue::Cat(s) => s.clone(),
    }
}

fn write_cfs(
    ws: &Workspace,
    name: &str,
    schema: &FeatureSchema,
    clf: &Classifier,
    inputs: &[Vec<f64>],
    targets: &[usize],
    cfs: &[Vec<f64>],
) -> Result<Vec<String>> {
    let k = if inputs.is_empty() { 0 } else { cfs.len() / inputs.len() };
    let csv_name = cfs_csv(name);
    let csv_path = ws.path(&csv_name);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::Usage(format!("{}: {e}", csv_path.display())))?;
    let mut header = vec!["input".to_string(), "candidate".into(), "target".into(), "predicted".into()];
    header.extend(schema.names());
    let csv_err = |e: csv::Error| CliError::Usage(format!("{}: {e}", csv_path.display()));
    w.write_record(&header).map_err(csv_err)?;
    let mut lines = String::new();
    for (j, cf) in cfs.iter().enumerate() {
        let i = j / k;
        let cf_scores = clf.class_scores(cf)?;
        let record = CfRecord {
            input: i,
            candidate: j % k,
            target: targets[i],
            x: inputs[i].clone(),
            cf: cf.clone(),
            x_scores: clf.class_scores(&inputs[i])?,
            cf_scores,
        };
        let mut row = vec![
            i.to_string(),
            (j % k).to_string(),
            targets[i].to_string(),
            clf.predict_class(cf)?.to_string(),
        ];
        row.extend(schema.decode(cf)?.iter().map(cell));
        w.write_record(&row).map_err(csv_err)?;
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    let jsonl = cfs_jsonl(name);
    ws.write_text(&jsonl, &lines)?;
    Ok(vec![csv_name, jsonl])
}

/// Inputs and targets for generation: flipped predictions, or a fixed target
/// restricted to inputs not already predicted as it.
fn inputs_and_targets(clf: &Classifier, rows: &[Vec<f64>], target: Option<usize>) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    match target {
        None => Ok((rows.to_vec(), flip_targets(clf, rows)?)),
        Some(t) if t >= clf.num_classes() => Err(CliError::Usage(format!(
            "target class {t} outside 0..{}",
            clf.num_classes()
        ))),
        Some(t) => {
            let mut kept = Vec::new();
            for r in rows {
                if clf.predict_class(r)? != t {
                    kept.push(r.clone());
                }
            }
            let n = kept.len();
            Ok((kept, vec![t; n]))
        }
    }
}

pub fn generate(a: &GenerateArgs) -> Result<Manifest> {
    let ws = Workspace::create(&a.out)?;
    let l = ws.load_data()?;
    let clf = ws.classifier()?;
    let vae = ws.vae(a.method.name())?;
    let seed = a.seed.unwrap_or(l.artifact.seed);
    let rows = &l.split(&a.split)?.encoded;
    let rows = &rows[..a.limit.unwrap_or(rows.len()).min(rows.len())];
    let (inputs, targets) = inputs_and_targets(&clf, rows, a.target_class)?;
    let cfs = vae.generate_batch(&inputs, &targets, a.k, &mut rng::derive(seed, 60))?;
    let artifacts = write_cfs(&ws, a.method.name(), &l.data.schema, &clf, &inputs, &targets, &cfs)?;
    let mut config = a.clone();
    config.seed = Some(seed);
    ws.write_manifest(
        &format!("generate-{}", a.method.name()),
        seed,
        &config,
        &artifacts,
        json!({ "inputs": inputs.len(), "counterfactuals": cfs.len() }),
    )
}

pub fn baseline_generate(a: &BaselineArgs) -> Result<Manifest> {
    let ws = Workspace::create(&a.out)?;
    let l = ws.load_data()?;
    let clf = ws.classifier()?;
    let seed = a.seed.unwrap_or(l.artifact.seed);
    let config = InstanceOptConfig {
        distance: match a.distance {
            Distance::L1 => DistanceKind::L1,
            Distance::Causal => DistanceKind::Causal,
        },
        distance_weight: a.weight,
        max_iterations: a.iterations,
        learning_rate: a.lr,
        seed,
        ..InstanceOptConfig::default()
    };
    let causal = match a.distance {
        Distance::L1 => None,
        Distance::Causal => {
            let scm = require_scm(&ws)?;
            let c = ws
                .constraints()?
                .and_then(|f| f.causal)
                .unwrap_or_else(|| CausalProximityConfig::from_scm(&scm, 55.0));
            Some(CausalProximity::new(&l.data.schema, &scm, c)?)
        }
    };
    let rows = &l.split(&a.split)?.encoded;
    let inputs = rows[..a.limit.min(rows.len())].to_vec();
    let targets = flip_targets(&clf, &inputs)?;
    let mut cfs = Vec::with_capacity(inputs.len());
    let mut valid = 0;
    for (x, &t) in inputs.iter().zip(&targets) {
        let r = optimize_cf(&clf, &l.data.schema, x, t, &config, causal.as_ref())?;
        valid += r.valid as usize;
        cfs.push(r.cf);
    }
    let name = match a.distance {
        Distance::L1 => "baseline-l1",
        Distance::Causal => "baseline-causal",
    };
    let artifacts = write_cfs(&ws, name, &l.data.schema, &clf, &inputs, &targets, &cfs)?;
    ws.write_manifest(
        &format!("generate-{name}"),
        seed,
        &config,
        &artifacts,
        json!({ "inputs": inputs.len(), "valid": valid }),
    )
}

/// Reads an oracle spec given inline or as a path to a JSON file.
pub fn parse_oracle_spec(value: &str) -> Result<OracleSpec> {
    let path = Path::new(value);
    let text = if path.is_file() {
        std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?
    } else {
        value.to_string()
    };
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid oracle spec: {e}")))
}

fn programmatic_oracle(spec: &OracleSpec, schema: &FeatureSchema, scm: Option<&Scm>) -> Result<Option<Oracle>> {
    match spec {
        OracleSpec::LabelFile { .. } => Ok(None),
        s => Ok(Some(Oracle::new(s, schema, scm)?)),
    }
}

pub fn read_cf_records(ws: &Workspace, name: &str) -> Result<Vec<CfRecord>> {
    let command = if name.starts_with("baseline-") { "baseline-generate" } else { "generate" };
    let text = ws.read_text(&cfs_jsonl(name), command)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Encoded inputs, CFs and per-input targets.
pub type Grouped = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>);

/// Groups CF records by input.
pub fn group_records(records: &[CfRecord]) -> Result<Grouped> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in records {
        let c = counts.entry(r.input).or_insert(0);
        if *c == 0 {
            if r.input != inputs.len() {
                return Err(CliError::Usage("counterfactual records are not grouped by input".into()));
            }
            inputs.push(r.x.clone());
            targets.push(r.target);
        }
        *c += 1;
    }
    let k = counts.values().next().copied().unwrap_or(0);
    if counts.values().any(|&c| c != k) {
        return Err(CliError::Usage("inputs have different numbers of counterfactuals".into()));
    }
    Ok((inputs, records.iter().map(|r| r.cf.clone()).collect(), targets))
}

/// Evaluation context pieces owned outside the borrowed [`EvalContext`].
pub struct EvalParts {
    pub monotonic: Option<(Vec<String>, String)>,
    pub oracles: Vec<(String, Oracle)>,
    pub scm: Option<Scm>,
}

impl EvalParts {
    pub fn load(ws: &Workspace, schema: &FeatureSchema, oracle: Option<&str>) -> Result<Self> {
        let scm = ws.scm()?;
        let monotonic = ws
            .constraints()?
            .and_then(|f| f.monotonic.into_iter().next())
            .map(|c| (c.causes, c.effect));
        let mut oracles = Vec::new();
        if let Some(spec) = oracle {
            let spec = parse_oracle_spec(spec)?;
            if let Some(o) = programmatic_oracle(&spec, schema, scm.as_ref())? {
                oracles.push((spec.name().to_string(), o));
            }
        }
        Ok(EvalParts { monotonic, oracles, scm })
    }

    pub fn context<'a>(&'a self, l: &'a Loaded, aes: Option<&'a PerClassAutoencoder>) -> EvalContext<'a> {
        EvalContext {
            schema: &l.data.schema,
            mad: &l.mad,
            monotonic: self.monotonic.clone(),
            oracles: self.oracles.clone(),
            scm: self.scm.as_ref().map(|s| (s, s.endogenous())),
            autoencoders: aes,
        }
    }
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<MetricsReport> {
    let ws = Workspace::create(&a.out)?;
    let l = ws.load_data()?;
    let clf = ws.classifier()?;
    let seed = a.seed.unwrap_or(l.artifact.seed);
    let (inputs, cfs, targets) = group_records(&read_cf_records(&ws, &a.cfs)?)?;
    let parts = EvalParts::load(&ws, &l.data.schema, a.oracle.as_deref())?;
    let aes = match a.metrics {
        MetricSet::All => Some(PerClassAutoencoder::train(
            &l.train.encoded,
            &l.train.labels,
            l.data.classes.len(),
            &AutoencoderConfig {
                seed,
                ..AutoencoderConfig::default()
            },
        )?),
        MetricSet::Core => None,
    };
    let report = evaluate(&parts.context(&l, aes.as_ref()), &clf, &inputs, &cfs, &targets)?;
    let name = metrics_file(&a.cfs);
    ws.write_json(&name, &report)?;
    let mut config = a.clone();
    config.seed = Some(seed);
    ws.write_manifest(
        &format!("evaluate-{}", a.cfs),
        seed,
        &config,
        &[name],
        json!({ "validity": report.validity, "feasibility": report.feasibility() }),
    )?;
    Ok(report)
}

pub fn build_queries(a: &BuildQueriesArgs) -> Result<Manifest> {
    let ws = Workspace::create(&a.out)?;
    let l = ws.load_data()?;
    let clf = ws.classifier()?;
    let vae = ws.vae("base")?;
    let seed = a.seed.unwrap_or(l.artifact.seed);
    let schema = &l.data.schema;
    let oracle = match &a.oracle {
        Some(s) => programmatic_oracle(&parse_oracle_spec(s)?, schema, ws.scm()?.as_ref())?,
        None => None,
    };
    let mut qs = build_query_set(&vae, &clf, schema, &l.train.encoded, a.fraction, a.per_input, oracle.as_ref(), seed)?;
    let mut records = Vec::new();
    for q in &mut qs.queries {
        if let (Some(label), Some(p)) = (q.label.take(), q.provenance.take()) {
            records.push(LabelRecord::from_query(schema, q, label, p, 0)?);
        }
    }
    ws.write_text(QUERIES, &qs.to_json())?;
    let mut artifacts = vec![QUERIES.to_string()];
    if !records.is_empty() {
        let path = ws.path(LABELS);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        write_labels(std::io::BufWriter::new(file), &records)?;
        artifacts.push(LABELS.into());
    }
    let feasible = records.iter().filter(|r| r.label == 1).count();
    let mut config = a.clone();
    config.seed = Some(seed);
    ws.write_manifest(
        "build-queries",
        seed,
        &config,
        &artifacts,
        json!({ "queries": qs.len(), "labeled": records.len(), "feasible": feasible }),
    )
}

fn labeled_queries(ws: &Workspace, labels: Option<&Path>) -> Result<QuerySet> {
    let mut qs = QuerySet::from_json(&ws.read_text(QUERIES, "build-queries")?)?;
    let path = match labels {
        Some(p) => p.to_path_buf(),
        None => ws.require(LABELS, "build-queries --oracle")?,
    };
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    qs.apply_labels(&read_labels(BufReader::new(file))?)?;
    Ok(qs)
}

pub fn finetune_cmd(a: &FinetuneArgs) -> Result<Manifest> {
    let ws = Workspace::create(&a.out)?;
    let l = ws.load_data()?;
    let clf = ws.classifier()?;
    let mut vae = ws.vae("base")?;
    let seed = a.seed.unwrap_or(l.artifact.seed);
    let qs = labeled_queries(&ws, a.labels.as_deref())?;
    let qs = match a.budget {
        Some(n) => qs.budget(n),
        None => qs,
    };
    let config = a.opts.config(seed);
    let trace = finetune(&mut vae, &clf, &qs, &config)?;
    let name = vae_file("example-based");
    vae.save(&ws.path(&name))?;
    #[derive(Serialize)]
    struct Config<'a> {
        budget: Option<usize>,
        finetune: &'a FinetuneConfig,
    }
    ws.write_manifest(
        "finetune",
        seed,
        &Config {
            budget: a.budget,
            finetune: &config,
        },
        &[name],
        json!({ "labels": qs.labeled().len(), "final_loss": trace.epoch_losses.last() }),
    )
}

fn parse_pairs(pairs: &[String], schema: &FeatureSchema) -> Result<Vec<(String, String)>> {
    if pairs.is_empty() {
        let names = schema.names();
        let mut out = Vec::new();
        for i in 0..names.len() {
            for j in i + 1..names.len() {
                out.push((names[i].clone(), names[j].clone()));
            }
        }
        return Ok(out);
    }
    pairs
        .iter()
        .map(|p| match p.split_once(':') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
            _ => Err(CliError::Usage(format!("pair '{p}' is not of the form a:b"))),
        })
        .collect()
}

pub fn discover(a: &DiscoverArgs) -> Result<Manifest> {
    let ws = Workspace::create(&a.out)?;
    let schema = ws.schema()?;
    let artifact: DatasetArtifact = ws.read_json(DATASET, "simulate")?;
    let seed = a.seed.unwrap_or(artifact.seed);
    let qs = labeled_queries(&ws, a.labels.as_deref())?;
    let pairs = parse_pairs(&a.pairs, &schema)?;
    let config = DiscoveryConfig {
        significance: a.significance,
        permutations: a.permutations,
        tol: a.tol,
        seed,
    };
    let found = discover_constraints(&schema, &qs, &pairs, &config)?;
    ws.write_json(DISCOVERY, &found)?;
    let present = found.iter().filter(|c| c.present).count();
    ws.write_manifest(
        "discover-constraints",
        seed,
        &json!({ "pairs": pairs, "discovery": config }),
        &names(&[DISCOVERY]),
        json!({ "present": present }),
    )
}
