mod common;

use common::planted::{all_pairs, any_flagged, discover, queries, recovered, unit_schema};
use feasible_cf::oracle::{discover_constraints, ks_statistic, DiscoveryConfig};
use feasible_cf::Error;

#[test]
fn planted_rule_is_recovered_with_its_direction() {
    for seed in 0..3 {
        let found = discover(seed, true);
        assert!(recovered(&found), "seed {seed}: {found:?}");
        let ab = found.iter().find(|c| c.pair == ("a".to_string(), "b".to_string())).unwrap();
        assert!(ab.p_values.iter().any(|&p| p <= 0.01 / 9.0));
    }
}

#[test]
fn random_labels_flag_nothing() {
    for seed in 100..103 {
        let found = discover(seed, false);
        assert!(!any_flagged(&found), "seed {seed}: {found:?}");
    }
}

#[test]
fn discovery_is_deterministic_per_seed() {
    assert_eq!(discover(4, true), discover(4, true));
}

#[test]
fn too_few_labels_per_class_is_rejected() {
    let mut q = queries(0, true);
    for query in q.queries.iter_mut() {
        query.label = Some(1);
    }
    let err = discover_constraints(&unit_schema(), &q, &all_pairs(), &DiscoveryConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InsufficientData(_)));
}

#[test]
fn ks_statistic_extremes() {
    assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
    assert_eq!(ks_statistic(&[1.0, 2.0], &[5.0, 6.0]), 1.0);
    assert!((ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]) - 0.5).abs() < 1e-15);
}
