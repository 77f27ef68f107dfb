use std::collections::BTreeMap;

use feasible_cf::classifier::Classifier;
use feasible_cf::data::{ColumnKind, ColumnSpec, FeatureSchema, MadStats, RangeMode, RawValue};
use feasible_cf::metrics::{evaluate, Autoencoder, EvalContext, MetricsReport, PerClassAutoencoder};
use feasible_cf::nn::{Activation, Mlp};
use feasible_cf::rng;
use feasible_cf::scm::{linear_gaussian_scm, LinearGaussianSpec, Scm};
use rand::Rng;

pub const INPUTS: usize = 5;
pub const PER_INPUT: usize = 2;

const A_RANGE: (f64, f64) = (0.0, 10.0);
const B_RANGE: (f64, f64) = (0.0, 5.0);
const CATEGORIES: [&str; 3] = ["r", "g", "b"];
const MAD_A: f64 = 1.7;
const MAD_B: f64 = 0.9;
const EDGE_INTERCEPT: f64 = 0.7;
const EDGE_SLOPE: f64 = 0.4;
const EDGE_STD: f64 = 0.8;

/// Two continuous columns `a -> b` and one categorical column, with a
/// random classifier and random autoencoders.
pub struct ToyBatch {
    pub schema: FeatureSchema,
    pub mad: MadStats,
    pub scm: Scm,
    pub classifier: Classifier,
    pub autoencoders: PerClassAutoencoder,
    pub inputs: Vec<Vec<f64>>,
    pub cfs: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
}

impl ToyBatch {
    pub fn new(seed: u64) -> Self {
        let schema = FeatureSchema::new(vec![
            ColumnSpec {
                name: "a".into(),
                kind: ColumnKind::Continuous { min: A_RANGE.0, max: A_RANGE.1 },
            },
            ColumnSpec {
                name: "b".into(),
                kind: ColumnKind::Continuous { min: B_RANGE.0, max: B_RANGE.1 },
            },
            ColumnSpec {
                name: "c".into(),
                kind: ColumnKind::Categorical {
                    categories: CATEGORIES.iter().map(|s| s.to_string()).collect(),
                    ranks: Some(vec![0.0, 1.0, 2.0]),
                },
            },
        ])
        .unwrap();
        let mad = MadStats {
            values: BTreeMap::from([("a".to_string(), MAD_A), ("b".to_string(), MAD_B)]),
        };
        let scm = linear_gaussian_scm(&LinearGaussianSpec {
            nodes: vec!["a".into(), "b".into()],
            edges: vec![("a".into(), "b".into(), EDGE_SLOPE)],
            intercepts: BTreeMap::from([("b".to_string(), EDGE_INTERCEPT)]),
            noise_std: EDGE_STD,
            outcome: None,
        })
        .unwrap();
        let mut r = rng::derive(seed, 910);
        let width = schema.encoded_width();
        let classifier = Classifier::from_mlp(Mlp::init(Classifier::spec(width, 4, 2).unwrap(), &mut r).unwrap()).unwrap();
        let mut ae = || Autoencoder {
            net: Mlp::init(Autoencoder::spec(width).unwrap(), &mut r).unwrap(),
        };
        let autoencoders = PerClassAutoencoder {
            per_class: vec![ae(), ae()],
            all: ae(),
        };
        let row = |a: f64, b: f64, c: usize| vec![RawValue::Num(a), RawValue::Num(b), RawValue::Cat(CATEGORIES[c].into())];
        let mut inputs = Vec::new();
        let mut cfs = Vec::new();
        let step = |r: &mut rng::SeededRng, s: f64| {
            let m: f64 = r.random_range(0.1..1.0) * s;
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        };
        for _ in 0..INPUTS {
            let (a, b, c) = (r.random_range(2.0..8.0), r.random_range(1.0..4.0), r.random_range(0..3));
            inputs.push(schema.encode(&row(a, b, c), RangeMode::Strict).unwrap());
            for _ in 0..PER_INPUT {
                let (da, db) = (step(&mut r, 1.5), step(&mut r, 0.8));
                let cc = r.random_range(0..3);
                cfs.push(schema.encode(&row(a + da, b + db, cc), RangeMode::Strict).unwrap());
            }
        }
        let targets = (0..INPUTS).map(|_| r.random_range(0..2)).collect();
        ToyBatch {
            schema,
            mad,
            scm,
            classifier,
            autoencoders,
            inputs,
            cfs,
            targets,
        }
    }

    pub fn report(&self) -> MetricsReport {
        let ctx = EvalContext {
            schema: &self.schema,
            mad: &self.mad,
            monotonic: Some((vec!["a".into()], "b".into())),
            oracles: Vec::new(),
            scm: Some((&self.scm, vec!["b".into()])),
            autoencoders: Some(&self.autoencoders),
        };
        evaluate(&ctx, &self.classifier, &self.inputs, &self.cfs, &self.targets).unwrap()
    }
}

/// Row-by-row forward pass with explicit loops.
pub fn forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (layer, act) in net.spec().activations.iter().enumerate() {
        let w = &net.params()[2 * layer];
        let b = &net.params()[2 * layer + 1];
        let out: Vec<f64> = (0..w.cols())
            .map(|j| {
                let mut s = b.get(0, j);
                for (i, hi) in h.iter().enumerate() {
                    s += hi * w.get(i, j);
                }
                match act {
                    Activation::Identity => s,
                    Activation::Relu => s.max(0.0),
                    Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                }
            })
            .collect();
        h = out;
    }
    h
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn raw(v: f64, range: (f64, f64)) -> f64 {
    range.0 + v * (range.1 - range.0)
}

fn category(x: &[f64]) -> usize {
    argmax(&x[2..5])
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn minus(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Brute-force recomputation of every metric.
pub struct Expected {
    pub validity: f64,
    pub cont_proximity: f64,
    pub cat_proximity: f64,
    pub s1: f64,
    pub s2: f64,
    pub feasibility: f64,
    pub causal_edge: f64,
    pub im1: f64,
    pub im2: f64,
}

pub fn expected(t: &ToyBatch) -> Expected {
    let n = t.cfs.len() as f64;
    let owner = |r: usize| r / PER_INPUT;
    let mut valid = 0.0;
    let mut cont = 0.0;
    let mut cat = 0.0;
    let (mut s1n, mut s1d, mut s2n, mut s2d) = (0.0, 0.0, 0.0, 0.0);
    let mut edge = 0.0;
    let mut im1 = 0.0;
    let mut im2 = 0.0;
    let loglik = |x: &[f64]| {
        let (a, b) = (raw(x[0], A_RANGE), raw(x[1], B_RANGE));
        let z = b - EDGE_INTERCEPT - EDGE_SLOPE * a;
        -0.5 * (2.0 * std::f64::consts::PI).ln() - EDGE_STD.ln() - z * z / (2.0 * EDGE_STD * EDGE_STD)
    };
    for (r, cf) in t.cfs.iter().enumerate() {
        let x = &t.inputs[owner(r)];
        let target = t.targets[owner(r)];
        if argmax(&forward(t.classifier.mlp(), cf)) == target {
            valid += 1.0;
        }
        let (ax, bx) = (raw(x[0], A_RANGE), raw(x[1], B_RANGE));
        let (ac, bc) = (raw(cf[0], A_RANGE), raw(cf[1], B_RANGE));
        cont += (ac - ax).abs() / MAD_A + (bc - bx).abs() / MAD_B;
        if category(cf) != category(x) {
            cat += 1.0;
        }
        if ac > ax {
            s1d += 1.0;
            if bc > bx {
                s1n += 1.0;
            }
        }
        if ac < ax {
            s2d += 1.0;
            if bc < bx {
                s2n += 1.0;
            }
        }
        edge += loglik(cf) / loglik(x);
        let original = argmax(&forward(t.classifier.mlp(), x));
        let ae_t = forward(&t.autoencoders.per_class[target].net, cf);
        let ae_o = forward(&t.autoencoders.per_class[original].net, cf);
        let ae_all = forward(&t.autoencoders.all.net, cf);
        im1 += norm(&minus(cf, &ae_t)) / norm(&minus(cf, &ae_o));
        im2 += norm(&minus(&ae_all, &ae_t)) / norm(cf);
    }
    let s1 = 100.0 * s1n / s1d;
    let s2 = 100.0 * s2n / s2d;
    Expected {
        validity: valid / n,
        cont_proximity: -cont / (2.0 * n),
        cat_proximity: -cat / n,
        s1,
        s2,
        feasibility: 2.0 * s1 * s2 / (s1 + s2),
        causal_edge: edge / n,
        im1: im1 / n,
        im2: im2 / n,
    }
}

/// `(metric, computed, expected)` for every metric in the report.
pub fn comparisons(t: &ToyBatch) -> Vec<(&'static str, f64, f64)> {
    let rep = t.report();
    let e = expected(t);
    let m = rep.monotonic.as_ref().expect("monotonic score");
    vec![
        ("validity", rep.validity, e.validity),
        ("continuous proximity", rep.cont_proximity.unwrap(), e.cont_proximity),
        ("categorical proximity", rep.cat_proximity.unwrap(), e.cat_proximity),
        ("monotonic s1", m.s1, e.s1),
        ("monotonic s2", m.s2, e.s2),
        ("harmonic-mean feasibility", m.score, e.feasibility),
        ("causal-edge score", rep.causal_edge.unwrap(), e.causal_edge),
        ("im1", rep.im1.unwrap(), e.im1),
        ("im2", rep.im2.unwrap(), e.im2),
    ]
}
