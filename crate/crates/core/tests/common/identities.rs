use feasible_cf::data::{ColumnKind, FeatureSchema};
use feasible_cf::feasibility::{CausalProximity, CausalProximityConfig};
use feasible_cf::rng;
use feasible_cf::scm::{simple_bn_default, Scm};
use rand::Rng;
use rand_distr::StandardNormal;

pub const KL_SAMPLES: usize = 100_000;

fn log_normal(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - std.ln() - 0.5 * z * z
}

/// Monte-Carlo `E_q[log q(z) - log p(z)]` for one-dimensional Gaussians.
pub fn kl_monte_carlo(mq: f64, sq: f64, mp: f64, sp: f64, samples: usize, seed: u64) -> f64 {
    let mut r = rng::derive(seed, 930);
    let total: f64 = (0..samples)
        .map(|_| {
            let z = mq + sq * r.sample::<f64, _>(StandardNormal);
            log_normal(z, mq, sq) - log_normal(z, mp, sp)
        })
        .sum();
    total / samples as f64
}

/// Random `(mean_q, std_q, mean_p, std_p)`.
pub fn kl_pairs(n: usize, seed: u64) -> Vec<(f64, f64, f64, f64)> {
    let mut r = rng::derive(seed, 931);
    (0..n)
        .map(|_| {
            (
                r.random_range(-1.0..1.0),
                r.random_range(0.5..1.5),
                r.random_range(-0.5..0.5),
                r.random_range(0.75..1.25),
            )
        })
        .collect()
}

/// The Simple-BN schema with ranges fixed by a sample, its SCM, and a
/// causal proximity with `x3` endogenous.
pub struct CausalSetup {
    pub schema: FeatureSchema,
    pub scm: Scm,
    pub proximity: CausalProximity,
    pub weight: f64,
}

impl CausalSetup {
    pub fn new(weight: f64) -> Self {
        let data = feasible_cf::pipeline::SimpleBnData::generate(2000, 5).unwrap();
        let schema = data.data.schema.clone();
        let proximity = CausalProximity::new(&schema, &data.scm, CausalProximityConfig::from_scm(&data.scm, weight)).unwrap();
        CausalSetup {
            schema,
            scm: data.scm,
            proximity,
            weight,
        }
    }

    fn range(&self, name: &str) -> (f64, f64) {
        match &self.schema.column(name).unwrap().kind {
            ColumnKind::Continuous { min, max } => (*min, *max),
            ColumnKind::Categorical { .. } => unreachable!(),
        }
    }

    /// Scaled `E[x3 | x1, x2]` from the Simple-BN equations.
    pub fn mechanism(&self, v: &[f64]) -> f64 {
        let p = simple_bn_default();
        let raw = |i: usize, name: &str| {
            let (lo, hi) = self.range(name);
            lo + v[i] * (hi - lo)
        };
        let s = raw(0, "x1") + raw(1, "x2");
        let (lo, hi) = self.range("x3");
        (p.k1 * s * s + p.b1 - lo) / (hi - lo)
    }

    /// A scaled input with `x3` on its mechanism.
    pub fn on_mechanism(&self, r: &mut impl Rng) -> Vec<f64> {
        let mut v = vec![r.random_range(0.0..1.0), r.random_range(0.0..1.0), 0.0];
        v[2] = self.mechanism(&v);
        v
    }

    /// Squared exogenous change plus the weighted squared gap between the
    /// observed and mechanism-predicted change of `x3`.
    pub fn relative_change(&self, x: &[f64], xcf: &[f64]) -> f64 {
        let exo = (xcf[0] - x[0]).powi(2) + (xcf[1] - x[1]).powi(2);
        let observed = xcf[2] - x[2];
        let predicted = self.mechanism(xcf) - self.mechanism(x);
        exo + self.weight * (observed - predicted).powi(2)
    }
}

/// Proximity with every feature exogenous.
pub fn exogenous_only(schema: &FeatureSchema, scm: &Scm) -> CausalProximity {
    let config = CausalProximityConfig {
        exogenous: schema.names(),
        endogenous: Vec::new(),
        weight: 1.0,
    };
    CausalProximity::new(schema, scm, config).unwrap()
}

pub fn plain_l1(x: &[f64], xcf: &[f64]) -> f64 {
    x.iter().zip(xcf).map(|(a, b)| (b - a).abs()).sum()
}
