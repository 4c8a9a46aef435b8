mod common;

use std::path::Path;

use aebound::bounds::*;
use aebound::checkpoint;
use aebound::losses::{margin_loss, se_loss, MarginConfig};
use aebound::matrix::Matrix;
use aebound::nn::Activation;
use common::*;
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture() -> aebound::nn::NetworkParams {
    checkpoint::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bound_net.json"))
        .unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn power_iteration_matches_jacobi_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..30 {
        let w = random_matrix(&mut rng, 20, 30, 1.0);
        let s = spectral_norm_default(&w);
        assert!(s.converged);
        let want = jacobi_singular_values(&w)[0];
        assert!(
            (s.value - want).abs() <= 1e-6 * want,
            "{} vs {want}",
            s.value
        );
        let fro: f64 = jacobi_singular_values(&w)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(rel(frobenius_norm(&w), fro) < 1e-12);
    }
}

#[test]
fn rank_one_and_zero_matrices() {
    let u = [1.0, 2.0, 2.0];
    let v = [3.0, 4.0];
    let w = Matrix::from_fn(3, 2, |i, j| u[i] * v[j]);
    assert!((spectral_norm_default(&w).value - 15.0).abs() < 1e-12);
    assert!((frobenius_norm(&w) - 15.0).abs() < 1e-12);
    assert_eq!(spectral_norm_default(&Matrix::zeros(2, 3)).value, 0.0);
}

#[test]
fn complexity_from_oracle_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let p = random_net(
            &mut rng,
            &[12, 8, 3, 8, 12],
            Activation::Relu,
            Activation::Sigmoid,
        );
        let (d, h) = (p.depth() as f64, p.max_width() as f64);
        let mut prod = 1.0;
        let mut sum = 0.0;
        for w in p.weights() {
            let sv = jacobi_singular_values(w);
            let s2 = sv[0] * sv[0];
            prod *= s2;
            sum += sv.iter().map(|v| v * v).sum::<f64>() / s2;
        }
        let b = 12f64.sqrt();
        let want = b * b * d * d * h * (d * h).ln() * prod * sum;
        assert!(rel(complexity_term(&p, b).unwrap(), want) < 1e-5);
    }
}

#[test]
fn fixture_network_bound_matches_high_precision_values() {
    let p = fixture();
    assert_eq!(p.dims(), vec![4, 3, 2, 3, 4]);
    let inputs =
        BoundInputs::for_network(&p, 2.0, 1000, 0.1, MarginConfig::new(0.45, 0.49).unwrap());
    let g = generalization_bound(&p, &inputs, 0.25).unwrap();
    // 60-digit reference evaluation with exact singular values
    assert!(
        rel(g.complexity, 843_355_192.962_699_8) < 1e-10,
        "{}",
        g.complexity
    );
    assert!(
        rel(g.delta_term, 22_958.593_210_921_79) < 1e-10,
        "{}",
        g.delta_term
    );
    assert!(rel(g.delta_term_normalized, 0.790_569_420_008_789_4) < 1e-10);
    assert_eq!(g.margin_bound_g1, 0.25 + g.delta_term);
}

#[test]
fn delta_term_shrinks_with_sample_size() {
    let p = fixture();
    let mut last = f64::INFINITY;
    for m in [100, 1000, 10_000, 100_000] {
        let inputs = BoundInputs::for_network(&p, 2.0, m, 0.05, MarginConfig::default());
        let t = generalization_bound(&p, &inputs, 0.0)
            .unwrap()
            .delta_term_normalized;
        assert!(t < last);
        last = t;
    }
}

#[test]
fn improvement_factor_values() {
    assert!((improvement_factor(60_000, 784, 30).unwrap() - 1.2201).abs() < 1e-4);
    assert!((improvement_factor(60_000, 784, 50).unwrap() - 1.1232).abs() < 1e-4);
    assert_eq!(improvement_factor(1000, 10, 10).unwrap(), 1.0);
    assert!(improvement_factor(1000, 10, 11).is_err());
}

#[test]
fn eta_prime_sign_decides_vacuity() {
    let e = eta_prime_theoretical(3.0, 0.5, 0.5, 2.0).unwrap();
    assert_eq!(e.value, 0.5);
    assert!(!e.vacuous);
    assert!(eta_prime_theoretical(1.0, 0.5, 0.5, 2.0).unwrap().vacuous);
}

fn matrix_strategy() -> impl Strategy<Value = Matrix> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("regressions"))),
        ..ProptestConfig::default()
    })]

    #[test]
    fn spectral_norm_is_absolutely_homogeneous(w in matrix_strategy(), c in -10.0f64..10.0) {
        let a = spectral_norm_default(&w).value;
        let b = spectral_norm_default(&w.scaled(c)).value;
        prop_assert!((b - c.abs() * a).abs() <= 1e-7 * (1.0 + c.abs() * a));
    }

    #[test]
    fn spectral_norm_at_most_frobenius(w in matrix_strategy()) {
        let s = spectral_norm_default(&w).value;
        prop_assert!(s <= frobenius_norm(&w) * (1.0 + 1e-12));
        prop_assert!(s >= frobenius_norm(&w) / (w.rows().min(w.cols()) as f64).sqrt() * (1.0 - 1e-7));
    }

    #[test]
    fn complexity_monotone_in_one_layer_scale(seed in 0u64..1000, c in 1.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_net(&mut rng, &[5, 4, 2, 4, 5], Activation::Relu, Activation::Sigmoid);
        let mut q = p.clone();
        let k = rng.gen_range(0..q.depth());
        q.layers_mut()[k].weights.scale(c);
        let (a, b) = (complexity_term(&p, 1.0).unwrap(), complexity_term(&q, 1.0).unwrap());
        prop_assert!(b >= a * (1.0 - 1e-9));
    }

    #[test]
    fn symmetric_mu_at_most_worst(r in 0.0f64..=1.0, g in 0.001f64..0.499, n in 1usize..1000) {
        let w = mu_bound_worst(r, g, n).unwrap();
        let s = mu_bound_symmetric(r, g, n).unwrap();
        prop_assert!(s <= w * (1.0 + 1e-12));
    }

    #[test]
    fn mu_bound_monotone_in_r(r in 0.0f64..0.99, dr in 0.0f64..0.01, g in 0.001f64..0.499) {
        prop_assert!(mu_bound_worst(r + dr, g, 50).unwrap() >= mu_bound_worst(r, g, 50).unwrap());
    }

    #[test]
    fn improvement_at_least_one(m in 100usize..1_000_000, n in 1usize..2000, frac in 0.0f64..1.0) {
        let nb = ((n as f64 * frac).ceil() as usize).clamp(1, n);
        prop_assert!(improvement_factor(m, n, nb).unwrap() >= 1.0);
    }

    #[test]
    fn squared_error_within_r_of_own_margin_loss(
        x in prop::collection::vec(0u8..2, 1..40),
        seed in 0u64..1000,
        g in 0.001f64..0.499,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let xhat: Vec<f64> = x.iter().map(|_| rng.gen_range(0.0..=1.0)).collect();
        let r = margin_loss(&x, &xhat, g).unwrap();
        prop_assert_eq!(r, count_margin_loss(&x, &xhat, g));
        let se = se_loss(&x, &xhat).unwrap();
        prop_assert!(se <= r_to_se_bound(r, g, x.len()).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn markov_bound_in_unit_interval(mu in 0.0f64..10.0, eps in 1e-6f64..10.0) {
        let b = markov_geps_bound(mu, eps).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
    }
}
