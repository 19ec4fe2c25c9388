//! Randomized invariants of the deterministic tables, precoders and power contracts.

use mimo_tpe_core::channel::{compute_estimation_model, mmse_estimate, sample_channels, CovarianceFactors};
use mimo_tpe_core::detequiv::{rzf_sinr_detequiv, SinrModelTpe};
use mimo_tpe_core::linalg::{complex_normal_matrix, sym_eigen_desc};
use mimo_tpe_core::precoders::{mrt_precoder, normalize_tpe_power, rzf_precoder, tpe_precoder};
use mimo_tpe_core::rng::{stream, Purpose};
use mimo_tpe_core::scenario::{build_covariances, CovarianceSet, Geometry, ScenarioConfig};
use mimo_tpe_core::{CMat, C64};
use proptest::prelude::*;
use rand::Rng;

fn random_psd(m: usize, rank: usize, scale: f64, rng: &mut impl Rng) -> CMat {
    let a = complex_normal_matrix(m, rank, rng);
    &a * a.adjoint() * C64::new(scale / rank as f64, 0.0)
}

fn random_covs(cells: usize, users: usize, m: usize, seed: u64) -> CovarianceSet {
    let mut rng = stream(seed, Purpose::Test, 0, 0);
    let mut mats = Vec::new();
    for l in 0..cells {
        for j in 0..cells {
            for _ in 0..users {
                let scale = if l == j { 1.0 } else { 0.2 };
                let rank = rng.gen_range(1..=m);
                mats.push(random_psd(m, rank, scale, &mut rng));
            }
        }
    }
    CovarianceSet::from_groups(cells, users, vec![(0..users).collect(); cells], mats).unwrap()
}

fn power(g: &CMat) -> f64 {
    g.norm_squared() / g.ncols() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tables_are_hankel_and_psd(seed in 0u64..10_000, cells in 1usize..=2, order in 1usize..=4, m in 8usize..=24) {
        let covs = random_covs(cells, 4, m, seed);
        let est = compute_estimation_model(&covs, 5.0).unwrap();
        let model = SinrModelTpe::build(&covs, &est, 0.1, &vec![order; cells]).unwrap();
        let mut tables: Vec<_> = model.b_bar.iter().collect();
        tables.extend(&model.c_bar);
        for b in tables {
            for n in 0..order {
                for p in 0..order {
                    prop_assert_eq!(b[(n, p)], b[(p, n)]);
                    if n + 1 < order && p > 0 {
                        prop_assert_eq!(b[(n, p)], b[(n + 1, p - 1)]);
                    }
                }
            }
            let (ev, _) = sym_eigen_desc(b);
            prop_assert!(ev[order - 1] >= -1e-9 * ev[0].abs().max(1e-300), "eigenvalues {:?}", ev);
        }
        prop_assert!(model.a_bar.iter().all(|a| a.iter().all(|x| x.is_finite())));
        prop_assert!(model.b_bar.iter().all(|b| b.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn truncation_matches_direct_build(seed in 0u64..10_000, order in 1usize..=3) {
        let covs = random_covs(2, 3, 10, seed);
        let est = compute_estimation_model(&covs, 5.0).unwrap();
        let full = SinrModelTpe::build(&covs, &est, 0.1, &[4, 4]).unwrap().truncated(&[order, order]).unwrap();
        let direct = SinrModelTpe::build(&covs, &est, 0.1, &[order, order]).unwrap();
        for (a, b) in full.b_bar.iter().zip(&direct.b_bar).chain(full.c_bar.iter().zip(&direct.c_bar)) {
            prop_assert!((a - b).norm() <= 1e-10 * b.norm());
        }
        for (a, b) in full.a_bar.iter().zip(&direct.a_bar) {
            prop_assert!((a - b).norm() <= 1e-10 * b.norm().max(1e-300));
        }
    }

    #[test]
    fn tpe_is_linear_in_coefficients(seed in 0u64..10_000, order in 1usize..=5, alpha in -3.0f64..3.0) {
        let mut rng = stream(seed, Purpose::Test, 1, 0);
        let h = complex_normal_matrix(12, 5, &mut rng);
        let w1: Vec<f64> = (0..order).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..order).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| alpha * a + b).collect();
        let lhs = tpe_precoder(&h, &mix).unwrap().g;
        let rhs = tpe_precoder(&h, &w1).unwrap().g * C64::new(alpha, 0.0) + tpe_precoder(&h, &w2).unwrap().g;
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
    }

    #[test]
    fn rzf_and_mrt_power_is_exact(seed in 0u64..10_000, m in 4usize..=40, k in 1usize..=8, phi in 1e-3f64..10.0, p in 0.1f64..5.0) {
        let mut rng = stream(seed, Purpose::Test, 2, 0);
        let h = complex_normal_matrix(m, k, &mut rng);
        prop_assert!((power(&rzf_precoder(&h, phi, p).unwrap().g) - p).abs() <= 1e-10 * p);
        prop_assert!((power(&mrt_precoder(&h, p).unwrap().g) - p).abs() <= 1e-10 * p);
    }

    #[test]
    fn rzf_sinr_is_nonnegative(seed in 0u64..10_000, phi in 0.01f64..2.0) {
        let covs = random_covs(2, 3, 12, seed);
        let est = compute_estimation_model(&covs, 3.0).unwrap();
        let r = rzf_sinr_detequiv(&covs, &est, &[phi, phi], 0.1, &[1.0, 1.0]).unwrap();
        prop_assert!(r.gamma_bar.iter().all(|g| g.is_finite() && *g >= 0.0));
    }

    #[test]
    fn tables_do_not_depend_on_seed(seed in 0u64..10_000) {
        let covs = random_covs(1, 3, 10, 42);
        let est = compute_estimation_model(&covs, 5.0).unwrap();
        let a = SinrModelTpe::build(&covs, &est, 0.1, &[3]).unwrap();
        // Consuming unrelated randomness must not perturb the tables.
        let mut rng = stream(seed, Purpose::Test, 3, 0);
        let _ = complex_normal_matrix(4, 4, &mut rng);
        let b = SinrModelTpe::build(&covs, &est, 0.1, &[3]).unwrap();
        prop_assert_eq!(a.b_bar, b.b_bar);
        prop_assert_eq!(a.c_bar, b.c_bar);
    }
}

#[test]
fn tpe_power_converges_at_scale() {
    let config = ScenarioConfig { cells: 1, users: 64, antennas: 256, ..ScenarioConfig::default() }.broadcast();
    let geo = Geometry::for_drop(&config, 0).unwrap();
    let covs = build_covariances(&config, &geo).unwrap();
    let est = compute_estimation_model(&covs, config.rho_tr).unwrap();
    let model = SinrModelTpe::build(&covs, &est, config.noise_variance(), &[4]).unwrap();
    let w = normalize_tpe_power(&[1.0, -0.8, 0.3, -0.05], model.c(0), 1.0).unwrap();
    let factors = CovarianceFactors::new(&covs).unwrap();
    let trials = 20;
    let mut total = 0.0;
    for t in 0..trials {
        let mut rng = stream(9, Purpose::Channel, 0, t);
        let draw = sample_channels(&factors, t, &mut rng);
        let hat = mmse_estimate(&draw, &est, &mut rng);
        total += power(&tpe_precoder(hat.cell(0), &w).unwrap().g);
    }
    let mean = total / trials as f64;
    assert!((mean - 1.0).abs() < 0.05, "mean TPE power {mean}");
}
