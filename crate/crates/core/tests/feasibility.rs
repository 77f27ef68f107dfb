mod common;

use common::identities::{exogenous_only, plain_l1, CausalSetup};
use feasible_cf::data::Dataset;
use feasible_cf::feasibility::{
    fit_monotonic_linear, fit_sign_constrained, monotonic_penalty, unary_hinge, ConstraintFile, Direction,
    MonotonicConstraint, Sign,
};
use feasible_cf::nn::{Tape, Tensor};
use feasible_cf::pipeline::SimpleBnData;
use feasible_cf::rng;
use feasible_cf::vae::record_l1;
use rand::Rng;

#[test]
fn squared_causal_proximity_equals_relative_change_on_mechanism() {
    let setup = CausalSetup::new(7.5);
    let mut r = rng::seeded(3);
    for _ in 0..200 {
        let x = setup.on_mechanism(&mut r);
        let xcf: Vec<f64> = (0..3).map(|_| r.random_range(-0.2..1.2)).collect();
        let l2 = setup.proximity.dist_causal_total_l2(&x, &xcf);
        assert!((l2 - setup.relative_change(&x, &xcf)).abs() < 1e-9);
        assert!((l2 - setup.proximity.relative_change_l2(&x, &xcf)).abs() < 1e-9);
    }
}

#[test]
fn off_mechanism_inputs_break_the_identity() {
    let setup = CausalSetup::new(1.0);
    let mut x = setup.on_mechanism(&mut rng::seeded(4));
    x[2] += 0.1;
    let xcf = vec![0.3, 0.6, 0.5];
    let gap = setup.proximity.dist_causal_total_l2(&x, &xcf) - setup.proximity.relative_change_l2(&x, &xcf);
    assert!(gap.abs() > 1e-4);
}

#[test]
fn causal_node_distance_is_zero_on_the_mechanism() {
    let setup = CausalSetup::new(2.0);
    let x = setup.on_mechanism(&mut rng::seeded(5));
    assert!(setup.proximity.dist_causal_node("x3", &x).unwrap() < 1e-12);
    assert!((setup.proximity.predicted_scaled("x3", &x).unwrap() - setup.mechanism(&x)).abs() < 1e-12);
    assert!(setup.proximity.dist_causal_total(&x, &x).abs() < 1e-12);
}

#[test]
fn empty_endogenous_set_is_bitwise_l1() {
    let setup = CausalSetup::new(1.0);
    let exo = exogenous_only(&setup.schema, &setup.scm);
    let mut r = rng::seeded(6);
    let rows = |r: &mut rng::SeededRng| -> Vec<Vec<f64>> { (0..8).map(|_| (0..3).map(|_| r.random_range(0.0..1.0)).collect()).collect() };
    let (xs, cfs) = (rows(&mut r), rows(&mut r));
    for (x, c) in xs.iter().zip(&cfs) {
        assert_eq!(exo.dist_causal_total(x, c).to_bits(), plain_l1(x, c).to_bits());
    }
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_rows(&xs).unwrap());
    let c = tape.leaf(Tensor::from_rows(&cfs).unwrap());
    let recorded = exo.record(&mut tape, x, c);
    let plain = record_l1(&mut tape, x, c);
    let bits = |v: &Tensor| v.values().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(tape.value(recorded)), bits(tape.value(plain)));
}

#[test]
fn unary_hinge_penalizes_only_the_forbidden_direction() {
    assert_eq!(unary_hinge(30.0, 31.0, Direction::NonDecrease), 0.0);
    assert_eq!(unary_hinge(30.0, 28.5, Direction::NonDecrease), 1.5);
    assert_eq!(unary_hinge(30.0, 28.5, Direction::NonIncrease), 0.0);
    assert_eq!(unary_hinge(30.0, 32.0, Direction::NonIncrease), 2.0);
}

#[test]
fn sign_constrained_fit_recovers_a_planted_line_and_respects_the_sign() {
    let mut r = rng::seeded(7);
    let column: Vec<f64> = (0..200).map(|_| r.random_range(0.0..10.0)).collect();
    let causes = vec![column.clone()];
    let up: Vec<f64> = column.iter().map(|c| 2.0 + 0.5 * c).collect();
    let fit = fit_sign_constrained(&causes, &up, Sign::Increasing).unwrap();
    assert!((fit.intercept - 2.0).abs() < 1e-9 && (fit.slopes[0] - 0.5).abs() < 1e-9);
    let down: Vec<f64> = column.iter().map(|c| 2.0 - 0.5 * c).collect();
    let clipped = fit_sign_constrained(&causes, &down, Sign::Increasing).unwrap();
    assert!(clipped.slopes[0].abs() < 1e-12);
}

#[test]
fn fitted_simple_bn_line_is_increasing_and_fits_the_data() {
    let d = SimpleBnData::generate(3000, 8).unwrap();
    let c = fit_monotonic_linear(&d.train, &MonotonicConstraint::new(SimpleBnData::causes(), SimpleBnData::effect(), Sign::Increasing)).unwrap();
    let fit = c.fit.as_ref().unwrap();
    assert!(fit.slopes.iter().all(|&b| b > 0.0));
    let train: &Dataset = &d.train;
    let mean_residual: f64 = train
        .encoded
        .iter()
        .map(|x| monotonic_penalty(&d.data.schema, x, &c).unwrap())
        .sum::<f64>()
        / train.len() as f64;
    assert!(mean_residual < 0.05, "mean scaled residual {mean_residual}");
}

#[test]
fn constraint_file_round_trips() {
    let text = r#"{
        "unary": [{"feature": "x1", "direction": "non-decrease"}],
        "monotonic": [{"causes": ["x1", "x2"], "effect": "x3", "sign": "increasing"}]
    }"#;
    let file = ConstraintFile::from_json(text).unwrap();
    assert_eq!(ConstraintFile::from_json(&file.to_json()).unwrap(), file);
}
