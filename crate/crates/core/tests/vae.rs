mod common;

use common::identities::{kl_monte_carlo, kl_pairs};
use feasible_cf::nn::{Tape, Tensor};
use feasible_cf::pipeline::SimpleBnData;
use feasible_cf::rng;
use feasible_cf::vae::{flip_target, hinge_validity_loss, kl_closed_form, record_hinge, sample_latent, CfVae, LatentPrior};
use rand::Rng;

#[test]
fn kl_closed_form_matches_monte_carlo() {
    for (i, (mq, sq, mp, sp)) in kl_pairs(4, 7).into_iter().enumerate() {
        let closed = kl_closed_form(&[mq], &[sq], &[mp], &[sp]);
        let mc = kl_monte_carlo(mq, sq, mp, sp, 100_000, 50 + i as u64);
        assert!((closed - mc).abs() < 1e-2, "pair {i}: {closed} vs {mc}");
    }
}

#[test]
fn kl_is_zero_for_identical_gaussians_and_sums_over_dimensions() {
    assert_eq!(kl_closed_form(&[0.3, -1.0], &[0.7, 2.0], &[0.3, -1.0], &[0.7, 2.0]), 0.0);
    let a = kl_closed_form(&[0.5], &[0.8], &[0.0], &[1.0]);
    let b = kl_closed_form(&[-0.2], &[1.3], &[0.1], &[0.9]);
    let both = kl_closed_form(&[0.5, -0.2], &[0.8, 1.3], &[0.0, 0.1], &[1.0, 0.9]);
    assert!((both - a - b).abs() < 1e-15);
}

#[test]
fn hinge_is_clipped_at_the_negative_margin() {
    assert!((hinge_validity_loss(&[0.2, 0.8], 1, 0.15) - -0.15).abs() < 1e-15);
    assert!((hinge_validity_loss(&[0.6, 0.4], 1, 0.15) - 0.2).abs() < 1e-15);
    assert!((hinge_validity_loss(&[0.5, 0.2, 0.3], 2, 0.1) - 0.2).abs() < 1e-15);
}

#[test]
fn recorded_hinge_matches_the_scalar_hinge() {
    let mut r = rng::seeded(9);
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|_| {
            let v: Vec<f64> = (0..3).map(|_| r.random_range(0.0..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        })
        .collect();
    let targets: Vec<usize> = (0..20).map(|_| r.random_range(0..3)).collect();
    let mut tape = Tape::new();
    let scores = tape.leaf(Tensor::from_rows(&rows).unwrap());
    let h = record_hinge(&mut tape, scores, &targets, 0.05);
    for (i, row) in rows.iter().enumerate() {
        assert!((tape.value(h).get(i, 0) - hinge_validity_loss(row, targets[i], 0.05)).abs() < 1e-15);
    }
}

#[test]
fn binary_targets_flip_the_prediction() {
    assert_eq!(flip_target(0, 2), 1);
    assert_eq!(flip_target(1, 2), 0);
    assert_eq!(flip_target(2, 3), 0);
}

#[test]
fn latent_samples_follow_the_posterior_moments() {
    let mut r = rng::seeded(10);
    let n = 40_000;
    let draws: Vec<f64> = (0..n).map(|_| sample_latent(&[1.5], &[0.4], &mut r)[0]).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((mean - 1.5).abs() < 0.01 && (var.sqrt() - 0.4).abs() < 0.01);
}

#[test]
fn generation_needs_training_is_seeded_and_stays_in_the_unit_box() {
    let d = SimpleBnData::generate(500, 11).unwrap();
    let mut vae = CfVae::init(d.data.schema.encoded_width(), 2, 11).unwrap();
    let xs = &d.test.encoded[..5];
    let t = vec![1; 5];
    assert!(matches!(vae.generate_batch(xs, &t, 3, &mut rng::seeded(1)), Err(feasible_cf::Error::State(_))));
    vae.mark_trained();
    let a = vae.generate_batch(xs, &t, 3, &mut rng::seeded(1)).unwrap();
    let b = vae.generate_batch(xs, &t, 3, &mut rng::seeded(1)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 15);
    assert!(a.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn networks_and_prior_round_trip_through_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vae.ckpt");
    let mut vae = CfVae::init(3, 2, 12).unwrap();
    vae.prior = LatentPrior {
        means: vec![vec![0.5; 10], vec![-0.5; 10]],
        stds: vec![vec![1.0; 10], vec![2.0; 10]],
    };
    vae.mark_trained();
    vae.save(&path).unwrap();
    assert_eq!(CfVae::load(&path).unwrap(), vae);
}
