mod common;

use common::gradcheck::{accepted_fixtures, check_all, TOLERANCE};

#[test]
fn every_loss_matches_central_differences() {
    let (fixtures, _) = accepted_fixtures(3);
    for fx in &fixtures {
        for (name, err) in check_all(fx) {
            println!("seed {} {name}: {err:.3e}", fx.seed);
            assert!(err < TOLERANCE, "seed {} {name}: relative error {err:.3e}", fx.seed);
        }
    }
}

#[test]
fn the_checker_flags_a_wrong_gradient() {
    use common::gradcheck::max_rel_err;
    let f = |t: &[f64]| t[0] * t[0] + 3.0 * t[1];
    assert!(max_rel_err(&[0.7, -0.2], &[1.4, 3.0], f) < 1e-8);
    assert!(max_rel_err(&[0.7, -0.2], &[1.4, 3.01], f) > 1e-3);
}
