use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use ndarray::Axis;
use proptest::prelude::*;

use qsense_core::ann::{init_network, mse_cost, train, training_arrays, ModelFile, TrainConfig};
use qsense_core::data::{generate_training_set, make_prior, PhaseGrid, PriorKind, TrainingSet};
use qsense_core::estimators::{posterior_on_grid, qubit_mle_analytic, FnEstimator};
use qsense_core::evaluation::{estimator_distance, CellStats};
use qsense_core::models::{FrequencyVector, LikelihoodModel};
use qsense_core::seed::derive_seed;

fn model_strategy() -> impl Strategy<Value = LikelihoodModel> {
    prop_oneof![
        Just(LikelihoodModel::Qubit),
        (1usize..=5).prop_map(|h| LikelihoodModel::twin_fock(2 * h).unwrap()),
    ]
}

fn small_set(seed: u64, total: usize) -> TrainingSet {
    let grid = PhaseGrid::new(6, PI).unwrap();
    let prior = make_prior(PriorKind::Flat, &grid).unwrap();
    generate_training_set(&LikelihoodModel::Qubit, &grid, &prior, total, 7, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn distributions_are_normalised(model in model_strategy(), theta in -10.0f64..10.0) {
        let p = model.probabilities(theta).unwrap();
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.probs().iter().all(|x| *x >= 0.0));
    }
}

proptest! {
    #[test]
    fn qubit_is_symmetric_about_pi(theta in 0.0f64..(2.0 * PI)) {
        let a = LikelihoodModel::Qubit.probabilities(theta).unwrap();
        let b = LikelihoodModel::Qubit.probabilities(2.0 * PI - theta).unwrap();
        prop_assert!((a.probs()[0] - b.probs()[0]).abs() < 1e-12);
    }

    #[test]
    fn qubit_fisher_is_one(theta in 0.01f64..(PI - 0.01)) {
        let f = LikelihoodModel::Qubit.fisher_information(theta).unwrap();
        prop_assert!((f - 1.0).abs() < 1e-9);
    }

    #[test]
    fn twin_fock_fisher_is_constant(h in 1usize..=2, theta in 0.05f64..1.5) {
        let n = 2 * h;
        let f = LikelihoodModel::twin_fock(n).unwrap().fisher_information(theta).unwrap();
        let half = n as f64 / 2.0;
        // twice the (N/2)(N/2+1) product; see the decisions ledger
        prop_assert!((f - 2.0 * half * (half + 1.0)).abs() < 1e-4, "F = {}", f);
    }

    #[test]
    fn mse_decomposes(estimates in prop::collection::vec(-5.0f64..5.0, 2..200), theta in -2.0f64..2.0) {
        let s = CellStats::from_estimates(&estimates, theta, 0);
        prop_assert!((s.mse - (s.variance + s.bias * s.bias)).abs() < 1e-9 * (1.0 + s.mse));
    }

    #[test]
    fn analytic_mle_is_decreasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(qubit_mle_analytic(lo).unwrap() > qubit_mle_analytic(hi).unwrap());
    }

    #[test]
    fn posterior_is_normalised_and_confined(up in 0u64..=30, m in 0u64..500, cut in 1usize..10) {
        let grid = PhaseGrid::new(10, PI).unwrap();
        let prior = make_prior(PriorKind::Step { cutoff: grid.theta(cut) }, &grid).unwrap();
        let fv = FrequencyVector::from_tallies(vec![up, 30 - up]).unwrap();
        let post = posterior_on_grid(&LikelihoodModel::Qubit, &fv, m, &prior, &grid).unwrap();
        prop_assert!((post.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (j, p) in post.probs().iter().enumerate() {
            if j > cut {
                prop_assert_eq!(*p, 0.0);
            }
        }
    }

    #[test]
    fn distance_of_constant_offset(c in -1.0f64..1.0, m in 1u64..60) {
        let inputs: Vec<FrequencyVector> =
            (0..=m).map(|k| FrequencyVector::from_tallies(vec![k, m - k]).unwrap()).collect();
        let reference = FnEstimator(|fv: &FrequencyVector| qubit_mle_analytic(fv.freq(0)));
        let shifted = FnEstimator(move |fv: &FrequencyVector| Ok(qubit_mle_analytic(fv.freq(0))? + c));
        let d = estimator_distance(&shifted, &reference, &inputs, None).unwrap();
        prop_assert!((d - c.abs()).abs() < 1e-12);
        prop_assert_eq!(estimator_distance(&reference, &reference, &inputs, None).unwrap(), 0.0);
    }

    #[test]
    fn full_set_cost_ignores_record_order(seed in any::<u64>(), net in any::<u64>(), rot in 1usize..50) {
        let ts = small_set(seed, 50);
        let params = init_network(2, &[8], net).unwrap();
        let (x, y) = training_arrays(&ts);
        let order: Vec<usize> = (0..50).map(|i| (i * 7 + rot) % 50).collect();
        let xs = x.select(Axis(0), &order);
        let ys = y.select(Axis(0), &order);
        let a = mse_cost(&params, x.view(), y.view()).unwrap();
        let b = mse_cost(&params, xs.view(), ys.view()).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a));
    }

    #[test]
    fn training_set_text_round_trips(seed in any::<u64>(), total in 1usize..40) {
        let ts = small_set(seed, total);
        prop_assert_eq!(TrainingSet::from_text(&ts.to_text()).unwrap(), ts);
    }

    #[test]
    fn model_file_round_trips(seed in any::<u64>(), w in 1usize..12, extra in 0usize..3) {
        let hidden: Vec<usize> = std::iter::repeat_n(w, 1 + extra).collect();
        let mf = ModelFile {
            params: init_network(3, &hidden, seed).unwrap(),
            train_seed: seed ^ 0xabc,
            training_header: small_set(seed, 1).header(),
        };
        prop_assert_eq!(ModelFile::from_text(&mf.to_text()).unwrap(), mf);
    }

    #[test]
    fn seeds_are_deterministic(master in any::<u64>(), tag in "[a-z]{1,8}", path in prop::collection::vec(any::<u64>(), 0..4)) {
        prop_assert_eq!(derive_seed(master, &tag, &path), derive_seed(master, &tag, &path));
        let a = small_set(derive_seed(master, &tag, &path), 20);
        let b = small_set(derive_seed(master, &tag, &path), 20);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn identical_seeds_give_identical_histories() {
    let ts = small_set(4, 200);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || train(&ts, init_network(2, &[16], 3).unwrap(), &cfg).unwrap();
    let (pa, ha) = run();
    let (pb, hb) = run();
    assert_eq!(pa, pb);
    assert_eq!(
        ha.as_slice().iter().map(|c| c.to_bits()).collect::<Vec<_>>(),
        hb.as_slice().iter().map(|c| c.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let ts = small_set(5, 100);
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let start = init_network(2, &[8], 1).unwrap();
    let (p, h) = train(&ts, start.clone(), &cfg).unwrap();
    assert_eq!(p, start);
    assert_abs_diff_eq!(h.as_slice()[0], h.as_slice()[2]);
}
