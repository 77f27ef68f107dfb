use feasible_cf::data::{ColumnKind, ColumnSpec, FeatureSchema};
use feasible_cf::oracle::{discover_constraints, DiscoveredConstraint, DiscoveryConfig, LabeledQuery, QuerySet};
use feasible_cf::rng;
use rand::Rng;

pub const FEATURES: [&str; 3] = ["a", "b", "c"];
pub const QUERIES: usize = 200;

pub fn unit_schema() -> FeatureSchema {
    FeatureSchema::new(
        FEATURES
            .iter()
            .map(|n| ColumnSpec {
                name: n.to_string(),
                kind: ColumnKind::Continuous { min: 0.0, max: 1.0 },
            })
            .collect(),
    )
    .unwrap()
}

pub fn all_pairs() -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (i, a) in FEATURES.iter().enumerate() {
        for b in &FEATURES[i + 1..] {
            out.push((a.to_string(), b.to_string()));
        }
    }
    out
}

/// Each feature stays put with probability 1/3, otherwise moves by
/// `±U(0.05, 0.3)`. With `planted`, a query is feasible unless `a` moves and
/// `b` does not move the same way; otherwise labels are fair coin flips.
pub fn queries(seed: u64, planted: bool) -> QuerySet {
    let mut r = rng::derive(seed, 920);
    let queries = (0..QUERIES as u64)
        .map(|id| {
            let x: Vec<f64> = (0..FEATURES.len()).map(|_| r.random_range(0.35..0.65)).collect();
            let delta: Vec<f64> = (0..FEATURES.len())
                .map(|_| match r.random_range(0..3) {
                    0 => 0.0,
                    1 => r.random_range(0.05..0.3),
                    _ => -r.random_range(0.05..0.3),
                })
                .collect();
            let cf: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let label = if planted {
                (delta[0] == 0.0 || delta[0].signum() == delta[1].signum()) as u8
            } else {
                r.random_bool(0.5) as u8
            };
            LabeledQuery {
                query_id: id,
                x,
                cf,
                target: 1,
                label: Some(label),
                provenance: None,
                timestamp: 0,
            }
        })
        .collect();
    QuerySet {
        queries,
        fraction: 1.0,
        per_input: 1,
        seed,
    }
}

pub fn discover(seed: u64, planted: bool) -> Vec<DiscoveredConstraint> {
    let config = DiscoveryConfig {
        seed,
        ..DiscoveryConfig::default()
    };
    discover_constraints(&unit_schema(), &queries(seed, planted), &all_pairs(), &config).unwrap()
}

/// The planted pair is flagged and oriented `a -> b`.
pub fn recovered(found: &[DiscoveredConstraint]) -> bool {
    found
        .iter()
        .any(|c| c.present && c.direction == Some(("a".to_string(), "b".to_string())))
}

pub fn any_flagged(found: &[DiscoveredConstraint]) -> bool {
    found.iter().any(|c| c.present)
}
