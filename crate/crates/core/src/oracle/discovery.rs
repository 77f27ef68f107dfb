use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::oracle::QuerySet;
use crate::rng;

/// Minimum number of queries required under each label.
pub const MIN_PER_LABEL: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    /// Family-wise level, split over three statistics per candidate pair.
    pub significance: f64,
    pub permutations: usize,
    /// Score changes at or below this magnitude count as "unchanged".
    pub tol: f64,
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            significance: 0.01,
            permutations: 1000,
            tol: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredConstraint {
    pub pair: (String, String),
    pub present: bool,
    /// `(cause, effect)` when a constraint is present and the direction rule
    /// is decisive.
    pub direction: Option<(String, String)>,
    /// Permutation p-values for the `a` marginal, the `b` marginal and the
    /// sign-agreement statistic.
    pub p_values: [f64; 3],
}

/// Two-sample sup-distance between empirical CDFs, evaluated along a
/// precomputed ascending order of the pooled values.
fn ks_sorted(values: &[f64], order: &[usize], group: &[bool], n_true: usize) -> f64 {
    let n_false = group.len() - n_true;
    let (mut ct, mut cf) = (0usize, 0usize);
    let mut best = 0.0f64;
    let mut k = 0;
    while k < order.len() {
        let v = values[order[k]];
        while k < order.len() && values[order[k]] == v {
            if group[order[k]] {
                ct += 1;
            } else {
                cf += 1;
            }
            k += 1;
        }
        let d = (ct as f64 / n_true as f64 - cf as f64 / n_false as f64).abs();
        best = best.max(d);
    }
    best
}

/// Two-sample KS sup-distance between `a` and `b`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let values: Vec<f64> = a.iter().chain(b).copied().collect();
    let group: Vec<bool> = (0..values.len()).map(|i| i < a.len()).collect();
    let order = ascending(&values);
    ks_sorted(&values, &order, &group, a.len())
}

fn ascending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    order
}

fn sign(v: f64, tol: f64) -> f64 {
    if v > tol {
        1.0
    } else if v < -tol {
        -1.0
    } else {
        0.0
    }
}

/// Tests each candidate pair for a difference between feasible and
/// infeasible change distributions, then orients flagged pairs: if `b`
/// changes among feasible queries while `a` stays put more often than the
/// reverse, `a` causes `b`.
pub fn discover_constraints(
    schema: &FeatureSchema,
    queries: &QuerySet,
    pairs: &[(String, String)],
    config: &DiscoveryConfig,
) -> Result<Vec<DiscoveredConstraint>> {
    if !(config.significance > 0.0 && config.significance < 1.0) {
        return Err(Error::Config(format!("significance {} outside (0, 1)", config.significance)));
    }
    if config.permutations == 0 {
        return Err(Error::Config("permutation count must be positive".into()));
    }
    let labeled = queries.labeled();
    let feasible: Vec<bool> = labeled.iter().map(|q| q.label == Some(1)).collect();
    let n_f = feasible.iter().filter(|&&f| f).count();
    let n_i = feasible.len() - n_f;
    if n_f < MIN_PER_LABEL || n_i < MIN_PER_LABEL {
        return Err(Error::InsufficientData(format!(
            "discovery needs at least {MIN_PER_LABEL} queries per label, got {n_f} feasible and {n_i} infeasible"
        )));
    }
    let delta = |col: usize| -> Result<Vec<f64>> {
        labeled
            .iter()
            .map(|q| Ok(schema.encoded_score(col, &q.cf)? - schema.encoded_score(col, &q.x)?))
            .collect()
    };
    let level = config.significance / (3.0 * pairs.len().max(1) as f64);
    let mut shuffle = rng::derive(config.seed, 40);
    let mut out = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let da = delta(schema.index_of(a)?)?;
        let db = delta(schema.index_of(b)?)?;
        let agree: Vec<f64> = da.iter().zip(&db).map(|(&x, &y)| sign(x, config.tol) * sign(y, config.tol)).collect();
        let stats = [&da, &db, &agree];
        let orders: Vec<Vec<usize>> = stats.iter().map(|v| ascending(v)).collect();
        let observed: Vec<f64> = (0..3).map(|s| ks_sorted(stats[s], &orders[s], &feasible, n_f)).collect();
        let mut exceed = [0usize; 3];
        let mut perm = feasible.clone();
        for _ in 0..config.permutations {
            perm.shuffle(&mut shuffle);
            for s in 0..3 {
                if ks_sorted(stats[s], &orders[s], &perm, n_f) >= observed[s] - 1e-12 {
                    exceed[s] += 1;
                }
            }
        }
        let b_count = config.permutations as f64;
        let p_values = exceed.map(|c| (1.0 + c as f64) / (1.0 + b_count));
        let present = p_values.iter().any(|&p| p <= level);
        let direction = if present {
            let still = |v: f64| v.abs() <= config.tol;
            let (mut a_causes_b, mut b_causes_a) = (0usize, 0usize);
            for i in (0..feasible.len()).filter(|&i| feasible[i]) {
                if still(da[i]) && !still(db[i]) {
                    a_causes_b += 1;
                } else if still(db[i]) && !still(da[i]) {
                    b_causes_a += 1;
                }
            }
            match a_causes_b.cmp(&b_causes_a) {
                std::cmp::Ordering::Greater => Some((a.clone(), b.clone())),
                std::cmp::Ordering::Less => Some((b.clone(), a.clone())),
                std::cmp::Ordering::Equal => None,
            }
        } else {
            None
        };
        out.push(DiscoveredConstraint {
            pair: (a.clone(), b.clone()),
            present,
            direction,
            p_values,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_identical_and_disjoint() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_statistic(&[0.0, 0.1], &[5.0, 6.0]), 1.0);
        assert!((ks_statistic(&[0.0, 0.0, 1.0, 1.0], &[0.0, 1.0, 1.0, 1.0]) - 0.25).abs() < 1e-12);
    }
}
