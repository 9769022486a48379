//! Solver properties checked against an independent reference optimizer.

mod common;

use common::checks;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use storyline::svm::{train_binary, Standardizer, TrainConfig};

#[test]
fn two_point_max_margin() {
    checks::two_point_max_margin().unwrap();
}

#[test]
fn primal_is_non_increasing_per_epoch() {
    checks::objective_monotone(30, 5).unwrap();
}

#[test]
fn matches_reference_optimum_on_tiny_problems() {
    checks::reference_agreement(20, 77).unwrap();
}

#[test]
fn duality_gap_at_tight_tolerance() {
    checks::duality_gap(123).unwrap();
}

#[test]
fn same_seed_gives_bit_identical_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (x, y) = checks::random_problem(&mut rng, 300, 12);
    let cfg = TrainConfig { seed: 42, ..TrainConfig::default() };
    let a = train_binary(&x, &y, &cfg).unwrap();
    let b = train_binary(&x, &y, &cfg).unwrap();
    assert_eq!(a.bias.to_bits(), b.bias.to_bits());
    assert!(a.weights.iter().zip(&b.weights).all(|(p, q)| p.to_bits() == q.to_bits()));
}

proptest! {
    #[test]
    fn standardized_columns_have_zero_mean_unit_scale(
        rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 2..40),
        constant in -5.0f64..5.0,
    ) {
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|mut r| { r.push(constant); r })
            .collect();
        let st = Standardizer::fit(&rows);
        let z: Vec<Vec<f64>> = rows.iter().map(|r| st.apply(r)).collect();
        let n = z.len() as f64;
        for j in 0..5 {
            let mean = z.iter().map(|r| r[j]).sum::<f64>() / n;
            prop_assert!(mean.abs() <= 1e-10, "column {j} mean {mean}");
            let var = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let raw_var = {
                let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n
            };
            if raw_var > 1e-9 {
                prop_assert!((var.sqrt() - 1.0).abs() <= 1e-10, "column {j} scale {}", var.sqrt());
            }
        }
    }
}
