//! Structural causal models: construction, sampling, conditional
//! expectations and per-edge Gaussian log-likelihoods.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::rng::seeded;

/// How a node is generated from its parents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mechanism {
    /// Parent-free `N(mean, std)` restricted to positive values.
    TruncatedNormal { mean: f64, std: f64 },
    /// `intercept + Σ coefficients[i] * parent[i] + N(0, noise_std)`.
    /// With no parents this is a plain Gaussian source.
    LinearGaussian {
        intercept: f64,
        coefficients: Vec<f64>,
        noise_std: f64,
    },
    /// `scale * (Σ parents)^2 + intercept + N(0, noise_std)`.
    QuadraticSumGaussian {
        scale: f64,
        intercept: f64,
        noise_std: f64,
    },
    /// `Bernoulli(σ(intercept + Σ linear[i] * parent[i] + Σ c * parent[a] * parent[b]))`,
    /// where each interaction is `[a, b, c]` with `a`, `b` indices into the parent list.
    BernoulliSigmoid {
        intercept: f64,
        linear: Vec<f64>,
        #[serde(default)]
        interactions: Vec<(usize, usize, f64)>,
    },
}

impl Mechanism {
    fn validate(&self, name: &str, arity: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("node '{name}': {msg}")));
        match self {
            Mechanism::TruncatedNormal { std, .. } => {
                if arity != 0 {
                    return bad("truncated-normal sources take no parents".into());
                }
                if !(*std > 0.0) {
                    return bad(format!("std must be positive, got {std}"));
                }
            }
            Mechanism::LinearGaussian {
                coefficients,
                noise_std,
                ..
            } => {
                if coefficients.len() != arity {
                    return bad(format!(
                        "{} coefficients for {arity} parents",
                        coefficients.len()
                    ));
                }
                if !(*noise_std > 0.0) {
                    return bad(format!("noise std must be positive, got {noise_std}"));
                }
            }
            Mechanism::QuadraticSumGaussian { noise_std, .. } => {
                if arity == 0 {
                    return bad("quadratic-sum mechanism needs parents".into());
                }
                if !(*noise_std > 0.0) {
                    return bad(format!("noise std must be positive, got {noise_std}"));
                }
            }
            Mechanism::BernoulliSigmoid {
                linear,
                interactions,
                ..
            } => {
                if linear.len() != arity {
                    return bad(format!("{} linear terms for {arity} parents", linear.len()));
                }
                if interactions.iter().any(|&(a, b, _)| a >= arity || b >= arity) {
                    return bad("interaction index out of range".into());
                }
            }
        }
        Ok(())
    }

    /// Noise-free structural value given parent values.
    pub fn expectation(&self, parents: &[f64]) -> f64 {
        match self {
            Mechanism::TruncatedNormal { mean, .. } => *mean,
            Mechanism::LinearGaussian {
                intercept,
                coefficients,
                ..
            } => intercept + coefficients.iter().zip(parents).map(|(c, p)| c * p).sum::<f64>(),
            Mechanism::QuadraticSumGaussian {
                scale, intercept, ..
            } => {
                let s: f64 = parents.iter().sum();
                scale * s * s + intercept
            }
            Mechanism::BernoulliSigmoid { .. } => sigmoid(self.logit(parents)),
        }
    }

    fn logit(&self, parents: &[f64]) -> f64 {
        match self {
            Mechanism::BernoulliSigmoid {
                intercept,
                linear,
                interactions,
            } => {
                intercept
                    + linear.iter().zip(parents).map(|(c, p)| c * p).sum::<f64>()
                    + interactions
                        .iter()
                        .map(|&(a, b, c)| c * parents[a] * parents[b])
                        .sum::<f64>()
            }
            _ => unreachable!("logit only defined for Bernoulli mechanisms"),
        }
    }

    /// Gaussian noise std, if the mechanism has one.
    pub fn noise_std(&self) -> Option<f64> {
        match self {
            Mechanism::LinearGaussian { noise_std, .. }
            | Mechanism::QuadraticSumGaussian { noise_std, .. } => Some(*noise_std),
            _ => None,
        }
    }

    fn is_bernoulli(&self) -> bool {
        matches!(self, Mechanism::BernoulliSigmoid { .. })
    }

    fn draw<R: Rng + ?Sized>(&self, parents: &[f64], rng: &mut R) -> f64 {
        match self {
            Mechanism::TruncatedNormal { mean, std } => loop {
                let z: f64 = rng.sample(StandardNormal);
                let v = mean + std * z;
                if v > 0.0 {
                    break v;
                }
            },
            Mechanism::LinearGaussian { noise_std, .. }
            | Mechanism::QuadraticSumGaussian { noise_std, .. } => {
                let z: f64 = rng.sample(StandardNormal);
                self.expectation(parents) + noise_std * z
            }
            Mechanism::BernoulliSigmoid { .. } => {
                let p = self.expectation(parents);
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One node of an SCM configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default)]
    pub parents: Vec<String>,
    pub mechanism: Mechanism,
}

/// JSON document describing an SCM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScmConfig {
    pub nodes: Vec<NodeSpec>,
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    name: String,
    parents: Vec<usize>,
    mechanism: Mechanism,
}

/// An acyclic structural causal model.
///
/// At most one node may carry a Bernoulli mechanism; it is the outcome and is
/// excluded from the feature set. Every other node is a feature, exogenous
/// when it has no parents and endogenous otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Scm {
    nodes: Vec<Node>,
    order: Vec<usize>,
    outcome: Option<usize>,
    config: ScmConfig,
}

impl Scm {
    pub fn new(config: ScmConfig) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, n) in config.nodes.iter().enumerate() {
            if index.insert(n.name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate node '{}'", n.name)));
            }
        }
        let mut nodes = Vec::with_capacity(config.nodes.len());
        for n in &config.nodes {
            let parents = n
                .parents
                .iter()
                .map(|p| {
                    index.get(p).copied().ok_or_else(|| {
                        Error::Config(format!("node '{}' has unknown parent '{p}'", n.name))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            n.mechanism.validate(&n.name, parents.len())?;
            nodes.push(Node {
                name: n.name.clone(),
                parents,
                mechanism: n.mechanism.clone(),
            });
        }

        let outcomes: Vec<usize> = (0..nodes.len())
            .filter(|&i| nodes[i].mechanism.is_bernoulli())
            .collect();
        if outcomes.len() > 1 {
            return Err(Error::Config("at most one Bernoulli outcome node is supported".into()));
        }
        let outcome = outcomes.first().copied();
        if let Some(o) = outcome {
            if nodes.iter().any(|n| n.parents.contains(&o)) {
                return Err(Error::Config(format!(
                    "outcome node '{}' cannot have children",
                    nodes[o].name
                )));
            }
        }

        let order = canonical_order(&nodes)?;
        Ok(Scm {
            nodes,
            order,
            outcome,
            config,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Scm::new(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn config(&self) -> &ScmConfig {
        &self.config
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.config).expect("scm config serializes")
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| Error::Config(format!("unknown node '{name}'")))
    }

    /// Feature names in declaration order (the outcome excluded).
    pub fn feature_names(&self) -> Vec<String> {
        self.feature_indices().map(|i| self.nodes[i].name.clone()).collect()
    }

    fn feature_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&i| Some(i) != self.outcome)
    }

    pub fn outcome_name(&self) -> Option<&str> {
        self.outcome.map(|o| self.nodes[o].name.as_str())
    }

    /// Source features (the set U).
    pub fn exogenous(&self) -> Vec<String> {
        self.feature_indices()
            .filter(|&i| self.nodes[i].parents.is_empty())
            .map(|i| self.nodes[i].name.clone())
            .collect()
    }

    /// Features with at least one parent (the set V).
    pub fn endogenous(&self) -> Vec<String> {
        self.feature_indices()
            .filter(|&i| !self.nodes[i].parents.is_empty())
            .map(|i| self.nodes[i].name.clone())
            .collect()
    }

    pub fn parents(&self, node: &str) -> Result<Vec<String>> {
        let i = self.index_of(node)?;
        Ok(self.nodes[i]
            .parents
            .iter()
            .map(|&p| self.nodes[p].name.clone())
            .collect())
    }

    pub fn mechanism(&self, node: &str) -> Result<&Mechanism> {
        Ok(&self.nodes[self.index_of(node)?].mechanism)
    }

    /// Canonical topological order (ties broken by name).
    pub fn topological_order(&self) -> Vec<String> {
        self.order.iter().map(|&i| self.nodes[i].name.clone()).collect()
    }

    /// Draws `n` rows; each row is generated node by node in canonical order.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        let outcome = self
            .outcome
            .ok_or_else(|| Error::Config("SCM has no Bernoulli outcome node".into()))?;
        let mut rng = seeded(seed);
        let feats: Vec<usize> = self.feature_indices().collect();
        let mut values = vec![0.0; self.nodes.len()];
        let mut parent_buf = Vec::new();
        let mut features = Vec::with_capacity(n);
        let mut outcomes = Vec::with_capacity(n);
        for _ in 0..n {
            for &i in &self.order {
                parent_buf.clear();
                parent_buf.extend(self.nodes[i].parents.iter().map(|&p| values[p]));
                values[i] = self.nodes[i].mechanism.draw(&parent_buf, &mut rng);
            }
            features.push(feats.iter().map(|&i| values[i]).collect());
            outcomes.push(values[outcome] as u8);
        }
        Ok(SampleSet {
            feature_names: self.feature_names(),
            outcome_name: self.nodes[outcome].name.clone(),
            features,
            outcomes,
            seed,
        })
    }

    /// `E[node | parents]`.
    pub fn mechanism_expectation(&self, node: &str, parent_values: &[f64]) -> Result<f64> {
        let n = &self.nodes[self.index_of(node)?];
        if n.parents.is_empty() {
            return Err(Error::NoParents(node.to_string()));
        }
        if parent_values.len() != n.parents.len() {
            return Err(Error::dim(
                format!("parents of '{node}'"),
                n.parents.len(),
                parent_values.len(),
            ));
        }
        Ok(n.mechanism.expectation(parent_values))
    }

    /// Gaussian log-density of `node`'s value in a feature row (declaration
    /// order, outcome excluded) given its parents' values in the same row.
    pub fn edge_log_likelihood(&self, node: &str, row: &[f64]) -> Result<f64> {
        let i = self.index_of(node)?;
        let n = &self.nodes[i];
        if n.parents.is_empty() {
            return Err(Error::NoParents(node.to_string()));
        }
        let std = n.mechanism.noise_std().ok_or_else(|| {
            Error::Unsupported(format!("likelihood of non-Gaussian node '{node}'"))
        })?;
        let pos: Vec<usize> = self.feature_indices().collect();
        if row.len() != pos.len() {
            return Err(Error::dim("feature row", pos.len(), row.len()));
        }
        let col = |node_idx: usize| pos.iter().position(|&p| p == node_idx).expect("feature");
        let parents: Vec<f64> = n.parents.iter().map(|&p| row[col(p)]).collect();
        let mean = n.mechanism.expectation(&parents);
        Ok(gaussian_log_density(row[col(i)], mean, std))
    }
}

pub fn gaussian_log_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * (2.0 * std::f64::consts::PI * std * std).ln() - 0.5 * z * z
}

fn canonical_order(nodes: &[Node]) -> Result<Vec<usize>> {
    let mut indegree: Vec<usize> = nodes.iter().map(|n| n.parents.len()).collect();
    let mut children = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for &p in &n.parents {
            children[p].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<(&str, usize)>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, d)| **d == 0)
        .map(|(i, _)| Reverse((nodes[i].name.as_str(), i)))
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(Reverse((_, i))) = ready.pop() {
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse((nodes[c].name.as_str(), c)));
            }
        }
    }
    if order.len() < nodes.len() {
        let cycle = find_cycle(nodes, &indegree);
        return Err(Error::Config(format!("cycle detected: {}", cycle.join(" -> "))));
    }
    Ok(order)
}

/// Walks parent links among unresolved nodes until a node repeats.
fn find_cycle(nodes: &[Node], indegree: &[usize]) -> Vec<String> {
    let start = indegree.iter().position(|&d| d > 0).expect("cycle exists");
    let mut path = vec![start];
    let mut cur = start;
    loop {
        let next = *nodes[cur]
            .parents
            .iter()
            .find(|&&p| indegree[p] > 0)
            .expect("unresolved node has an unresolved parent");
        if let Some(pos) = path.iter().position(|&p| p == next) {
            let mut cyc: Vec<String> = path[pos..].iter().rev().map(|&i| nodes[i].name.clone()).collect();
            cyc.push(nodes[path[path.len() - 1]].name.clone());
            return cyc;
        }
        path.push(next);
        cur = next;
    }
}

/// Rows drawn from an SCM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub feature_names: Vec<String>,
    pub outcome_name: String,
    pub features: Vec<Vec<f64>>,
    pub outcomes: Vec<u8>,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.feature_names.iter().position(|n| n == name)?;
        Some(self.features.iter().map(|r| r[c]).collect())
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.feature_names.clone();
        header.push(self.outcome_name.clone());
        w.write_record(&header)?;
        for (row, y) in self.features.iter().zip(&self.outcomes) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Parameters of the three-feature Simple-BN process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimpleBnParams {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub k1: f64,
    pub k2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Default for SimpleBnParams {
    fn default() -> Self {
        SimpleBnParams {
            mu1: 50.0,
            mu2: 50.0,
            sigma1: 15.0,
            sigma2: 17.0,
            sigma3: 0.5,
            k1: 0.0003,
            k2: 0.0013,
            b1: 10.0,
            b2: 10.0,
        }
    }
}

impl SimpleBnParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("sigma3", self.sigma3),
            ("k1", self.k1),
            ("k2", self.k2),
            ("b1", self.b1),
            ("b2", self.b2),
        ];
        match positive.iter().find(|(_, v)| !(*v > 0.0)) {
            Some((name, v)) => Err(Error::Config(format!("{name} must be positive, got {v}"))),
            None => Ok(()),
        }
    }

    /// x1, x2 positive truncated normals; x3 = k1 (x1 + x2)^2 + b1 + noise;
    /// y ~ Bernoulli(σ(k2 x1 x2 + b2 - x3)).
    pub fn config(&self) -> ScmConfig {
        ScmConfig {
            nodes: vec![
                NodeSpec {
                    name: "x1".into(),
                    parents: vec![],
                    mechanism: Mechanism::TruncatedNormal {
                        mean: self.mu1,
                        std: self.sigma1,
                    },
                },
                NodeSpec {
                    name: "x2".into(),
                    parents: vec![],
                    mechanism: Mechanism::TruncatedNormal {
                        mean: self.mu2,
                        std: self.sigma2,
                    },
                },
                NodeSpec {
                    name: "x3".into(),
                    parents: vec!["x1".into(), "x2".into()],
                    mechanism: Mechanism::QuadraticSumGaussian {
                        scale: self.k1,
                        intercept: self.b1,
                        noise_std: self.sigma3,
                    },
                },
                NodeSpec {
                    name: "y".into(),
                    parents: vec!["x1".into(), "x2".into(), "x3".into()],
                    mechanism: Mechanism::BernoulliSigmoid {
                        intercept: self.b2,
                        linear: vec![0.0, 0.0, -1.0],
                        interactions: vec![(0, 1, self.k2)],
                    },
                },
            ],
        }
    }

    pub fn scm(&self) -> Result<Scm> {
        self.validate()?;
        Scm::new(self.config())
    }
}

pub fn simple_bn_default() -> SimpleBnParams {
    SimpleBnParams::default()
}

/// Node list plus coefficient table for a linear-Gaussian network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianSpec {
    pub nodes: Vec<String>,
    /// `(parent, child, coefficient)`.
    pub edges: Vec<(String, String, f64)>,
    #[serde(default)]
    pub intercepts: BTreeMap<String, f64>,
    pub noise_std: f64,
    /// Outcome `Bernoulli(σ(intercept + Σ w * feature))` over the listed features.
    pub outcome: Option<LinearOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearOutcome {
    pub name: String,
    pub intercept: f64,
    pub weights: Vec<(String, f64)>,
}

pub fn linear_gaussian_scm(spec: &LinearGaussianSpec) -> Result<Scm> {
    let mut nodes = Vec::with_capacity(spec.nodes.len() + 1);
    for name in &spec.nodes {
        let incoming: Vec<&(String, String, f64)> =
            spec.edges.iter().filter(|(_, c, _)| c == name).collect();
        nodes.push(NodeSpec {
            name: name.clone(),
            parents: incoming.iter().map(|(p, _, _)| p.clone()).collect(),
            mechanism: Mechanism::LinearGaussian {
                intercept: spec.intercepts.get(name).copied().unwrap_or(0.0),
                coefficients: incoming.iter().map(|(_, _, w)| *w).collect(),
                noise_std: spec.noise_std,
            },
        });
    }
    if let Some(edge) = spec
        .edges
        .iter()
        .find(|(p, c, _)| !spec.nodes.contains(p) || !spec.nodes.contains(c))
    {
        return Err(Error::Config(format!("edge {} -> {} names an unknown node", edge.0, edge.1)));
    }
    if let Some(out) = &spec.outcome {
        nodes.push(NodeSpec {
            name: out.name.clone(),
            parents: out.weights.iter().map(|(n, _)| n.clone()).collect(),
            mechanism: Mechanism::BernoulliSigmoid {
                intercept: out.intercept,
                linear: out.weights.iter().map(|(_, w)| *w).collect(),
                interactions: vec![],
            },
        });
    }
    Scm::new(ScmConfig { nodes })
}

/// Random DAG over `n` nodes: edges only go from lower to higher index in a
/// seeded random permutation, each present with probability `edge_prob`.
pub fn random_linear_gaussian(n: usize, edge_prob: f64, seed: u64) -> Result<LinearGaussianSpec> {
    use rand::seq::SliceRandom;
    let mut rng = seeded(seed);
    let nodes: Vec<String> = (0..n).map(|i| format!("v{i:02}")).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < edge_prob {
                let w = rng.random_range(0.3..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                edges.push((nodes[perm[a]].clone(), nodes[perm[b]].clone(), w));
            }
        }
    }
    let intercepts = nodes.iter().map(|n| (n.clone(), rng.random_range(-1.0..1.0))).collect();
    let sink = nodes[perm[n - 1]].clone();
    Ok(LinearGaussianSpec {
        nodes,
        edges,
        intercepts,
        noise_std: 1.0,
        outcome: Some(LinearOutcome {
            name: "y".into(),
            intercept: 0.0,
            weights: vec![(sink, 1.0)],
        }),
    })
}

/// Default 14-node linear-Gaussian network used as a stand-in for the
/// agronomic network: a layered DAG with a monotone positive path
/// `SproutN -> BunchN`.
pub fn agronomic_default() -> LinearGaussianSpec {
    let names = [
        "SproutN", "BunchN", "GrapeW", "WoodW", "SPAD06", "NDVI06", "SPAD08", "NDVI08", "Acid",
        "Potass", "Brix", "pH", "Anthoc", "Polyph",
    ];
    let e = |p: &str, c: &str, w: f64| (p.to_string(), c.to_string(), w);
    let edges = vec![
        e("SproutN", "BunchN", 0.8),
        e("SproutN", "WoodW", 0.5),
        e("SPAD06", "NDVI06", 0.6),
        e("SPAD06", "SPAD08", 0.7),
        e("NDVI06", "NDVI08", 0.7),
        e("BunchN", "GrapeW", 0.9),
        e("WoodW", "GrapeW", 0.3),
        e("SPAD08", "GrapeW", 0.4),
        e("NDVI08", "GrapeW", 0.2),
        e("GrapeW", "Brix", -0.5),
        e("GrapeW", "Acid", 0.4),
        e("Potass", "pH", 0.6),
        e("Acid", "pH", -0.7),
        e("Brix", "Anthoc", 0.6),
        e("Brix", "Polyph", 0.5),
        e("pH", "Polyph", -0.3),
    ];
    LinearGaussianSpec {
        nodes: names.iter().map(|s| s.to_string()).collect(),
        edges,
        intercepts: names.iter().map(|s| (s.to_string(), 5.0)).collect(),
        noise_std: 1.0,
        outcome: Some(LinearOutcome {
            name: "Quality".into(),
            intercept: -4.0,
            weights: vec![
                ("Brix".into(), 0.6),
                ("Anthoc".into(), 0.4),
                ("Acid".into(), -0.3),
            ],
        }),
    }
}
