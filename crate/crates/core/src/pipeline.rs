//! End-to-end Simple-BN run: simulate, train the classifier and every
//! generator variant, and score them on the test split.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::baseline::{optimize_cf, DistanceKind, InstanceOptConfig};
use crate::classifier::{train_classifier, Classifier, ClassifierConfig};
use crate::data::{mad, split, Dataset, MadStats};
use crate::error::Result;
use crate::feasibility::{
    fit_monotonic_linear, train_model_approx, train_model_based, CausalProximity, CausalProximityConfig,
    ConstraintPenalties, MonotonicConstraint, Sign,
};
use crate::metrics::{evaluate, AutoencoderConfig, EvalContext, MetricsReport, PerClassAutoencoder};
use crate::oracle::{build_query_set, finetune, FinetuneConfig, Oracle, OracleSpec, QuerySet};
use crate::rng;
use crate::scm::{simple_bn_default, Scm};
use crate::vae::{flip_targets, train_base, CfVae, VaeTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimpleBnConfig {
    pub samples: usize,
    pub seed: u64,
    pub classifier: ClassifierConfig,
    pub base: VaeTrainConfig,
    pub model_based: VaeTrainConfig,
    pub causal_weight: f64,
    pub model_approx: VaeTrainConfig,
    pub constraint_weight: f64,
    pub finetune: FinetuneConfig,
    pub query_fraction: f64,
    pub query_per_input: usize,
    pub budgets: Vec<usize>,
    /// CFs generated per test input at evaluation.
    pub eval_per_input: usize,
    pub baseline: InstanceOptConfig,
    /// Test inputs given to the per-instance optimizer.
    pub baseline_inputs: usize,
    /// Trains the interpretability autoencoders when set.
    pub autoencoder: Option<AutoencoderConfig>,
}

impl SimpleBnConfig {
    pub fn new(seed: u64) -> Self {
        let vae = |margin: f64, validity_weight: f64| VaeTrainConfig {
            margin,
            validity_weight,
            seed,
            ..VaeTrainConfig::default()
        };
        SimpleBnConfig {
            samples: 10_000,
            seed,
            classifier: ClassifierConfig {
                seed,
                ..ClassifierConfig::default()
            },
            base: vae(0.15, 150.0),
            model_based: vae(0.015, 85.0),
            causal_weight: 55.0,
            model_approx: vae(0.087, 96.0),
            constraint_weight: 0.1,
            finetune: FinetuneConfig::simple_bn(seed),
            query_fraction: 0.1,
            query_per_input: 10,
            budgets: vec![25, 50, 75, 100],
            eval_per_input: 10,
            baseline: InstanceOptConfig {
                seed,
                ..InstanceOptConfig::default()
            },
            baseline_inputs: 100,
            autoencoder: Some(AutoencoderConfig {
                seed,
                ..AutoencoderConfig::default()
            }),
        }
    }
}

impl Default for SimpleBnConfig {
    fn default() -> Self {
        Self::new(0)
    }
}

/// Simulated data with its split and MAD statistics.
pub struct SimpleBnData {
    pub scm: Scm,
    pub data: Dataset,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub mad: MadStats,
}

impl SimpleBnData {
    pub fn generate(samples: usize, seed: u64) -> Result<Self> {
        let scm = simple_bn_default().scm()?;
        let data = Dataset::from_samples(&scm.sample(samples, seed)?)?;
        let s = split(data.len(), seed)?;
        let train = data.subset(&s.train);
        let mad = mad(&train.raw, &data.schema)?;
        Ok(SimpleBnData {
            validation: data.subset(&s.validation),
            test: data.subset(&s.test),
            train,
            scm,
            data,
            mad,
        })
    }

    pub fn causes() -> Vec<String> {
        vec!["x1".into(), "x2".into()]
    }

    pub fn effect() -> String {
        "x3".into()
    }

    pub fn oracle(&self) -> Result<Oracle> {
        Oracle::new(&OracleSpec::ScmMonotonic { effect: Self::effect() }, &self.data.schema, Some(&self.scm))
    }

    pub fn eval_context<'a>(&'a self, autoencoders: Option<&'a PerClassAutoencoder>) -> EvalContext<'a> {
        EvalContext {
            schema: &self.data.schema,
            mad: &self.mad,
            monotonic: Some((Self::causes(), Self::effect())),
            oracles: Vec::new(),
            scm: Some((&self.scm, self.scm.endogenous())),
            autoencoders,
        }
    }

    pub fn causal_proximity(&self, weight: f64) -> Result<CausalProximity> {
        CausalProximity::new(&self.data.schema, &self.scm, CausalProximityConfig::from_scm(&self.scm, weight))
    }

    pub fn constraint_penalties(&self, weight: f64) -> Result<ConstraintPenalties> {
        let c = MonotonicConstraint::new(Self::causes(), Self::effect(), Sign::Increasing);
        let fitted = fit_monotonic_linear(&self.train, &c)?;
        ConstraintPenalties::new(&self.data.schema, &[], &[fitted], weight)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub classifier_accuracy: f64,
    pub queries: usize,
    pub feasible_queries: usize,
    pub methods: Vec<MethodReport>,
}

impl PipelineReport {
    pub fn method(&self, name: &str) -> Option<&MetricsReport> {
        self.methods.iter().find(|m| m.method == name).map(|m| &m.metrics)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Trained artifacts of a pipeline run.
pub struct SimpleBnModels {
    pub classifier: Classifier,
    pub base: CfVae,
    pub model_based: CfVae,
    pub model_approx: CfVae,
    pub queries: QuerySet,
}

/// Scores `k` generated CFs per test input.
pub fn evaluate_generator(
    ctx: &EvalContext<'_>,
    classifier: &Classifier,
    vae: &CfVae,
    inputs: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let targets = flip_targets(classifier, inputs)?;
    let cfs = vae.generate_batch(inputs, &targets, k, &mut rng::derive(seed, 60))?;
    evaluate(ctx, classifier, inputs, &cfs, &targets)
}

/// Scores the per-instance optimizer on `inputs`, one CF each.
pub fn evaluate_baseline(
    ctx: &EvalContext<'_>,
    classifier: &Classifier,
    inputs: &[Vec<f64>],
    config: &InstanceOptConfig,
    causal: Option<&CausalProximity>,
) -> Result<MetricsReport> {
    let targets = flip_targets(classifier, inputs)?;
    let cfs = inputs
        .iter()
        .zip(&targets)
        .map(|(x, &t)| Ok(optimize_cf(classifier, ctx.schema, x, t, config, causal)?.cf))
        .collect::<Result<Vec<_>>>()?;
    evaluate(ctx, classifier, inputs, &cfs, &targets)
}

pub fn run_simple_bn(config: &SimpleBnConfig) -> Result<(PipelineReport, SimpleBnModels)> {
    let started = Instant::now();
    let d = SimpleBnData::generate(config.samples, config.seed)?;
    let width = d.data.schema.encoded_width();
    let classes = d.data.classes.len();
    let classifier = train_classifier(
        &d.train.encoded,
        &d.train.labels,
        classes,
        Some((&d.validation.encoded, &d.validation.labels)),
        &config.classifier,
    )?;
    let classifier_accuracy = classifier.accuracy(&d.test.encoded, &d.test.labels)?;
    info!("classifier test accuracy {classifier_accuracy:.4}");

    let autoencoders = match &config.autoencoder {
        Some(c) => Some(PerClassAutoencoder::train(&d.train.encoded, &d.train.labels, classes, c)?),
        None => None,
    };
    let ctx = d.eval_context(autoencoders.as_ref());
    let test = &d.test.encoded;
    let k = config.eval_per_input;
    let mut methods = Vec::new();
    let mut push = |method: &str, metrics: MetricsReport| {
        info!("{method}: feasibility {:?}, validity {:.4}", metrics.feasibility(), metrics.validity);
        methods.push(MethodReport {
            method: method.into(),
            metrics,
        });
    };

    let mut base = CfVae::init(width, classes, config.seed)?;
    train_base(&mut base, &classifier, &d.train.encoded, &config.base)?;
    push("base", evaluate_generator(&ctx, &classifier, &base, test, k, config.seed)?);

    let proximity = d.causal_proximity(config.causal_weight)?;
    let mut model_based = CfVae::init(width, classes, config.seed)?;
    train_model_based(&mut model_based, &classifier, &d.train.encoded, &config.model_based, &proximity)?;
    push("model-based", evaluate_generator(&ctx, &classifier, &model_based, test, k, config.seed)?);

    let penalties = d.constraint_penalties(config.constraint_weight)?;
    let mut model_approx = CfVae::init(width, classes, config.seed)?;
    train_model_approx(&mut model_approx, &classifier, &d.train.encoded, &config.model_approx, &penalties)?;
    push("model-approx", evaluate_generator(&ctx, &classifier, &model_approx, test, k, config.seed)?);

    let oracle = d.oracle()?;
    let queries = build_query_set(
        &base,
        &classifier,
        &d.data.schema,
        &d.train.encoded,
        config.query_fraction,
        config.query_per_input,
        Some(&oracle),
        config.seed,
    )?;
    for &budget in &config.budgets {
        let mut tuned = base.clone();
        finetune(&mut tuned, &classifier, &queries.budget(budget), &config.finetune)?;
        push(
            &format!("example-based-{budget}"),
            evaluate_generator(&ctx, &classifier, &tuned, test, k, config.seed)?,
        );
    }

    let inputs = &test[..config.baseline_inputs.min(test.len())];
    let l1 = InstanceOptConfig {
        distance: DistanceKind::L1,
        ..config.baseline.clone()
    };
    push("baseline-l1", evaluate_baseline(&ctx, &classifier, inputs, &l1, None)?);
    let causal = InstanceOptConfig {
        distance: DistanceKind::Causal,
        ..config.baseline.clone()
    };
    push("baseline-causal", evaluate_baseline(&ctx, &classifier, inputs, &causal, Some(&proximity))?);

    info!("pipeline finished in {:.1?}", started.elapsed());
    let feasible_queries = queries.queries.iter().filter(|q| q.label == Some(1)).count();
    Ok((
        PipelineReport {
            seed: config.seed,
            classifier_accuracy,
            queries: queries.len(),
            feasible_queries,
            methods,
        },
        SimpleBnModels {
            classifier,
            base,
            model_based,
            model_approx,
            queries,
        },
    ))
}
