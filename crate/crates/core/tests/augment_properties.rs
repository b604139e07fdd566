mod common;

use capnet::augment::{lift_selector, DEFAULT_SHARDS};
use capnet::linalg::symmetric_eigen;
use capnet::{
    augmented_spatial_profile, build_augmented_covariance, build_augmented_projection,
    capacity_of_subspace, decoupling_nu, estimate_nu_monte_carlo, linear_stacked_basis,
    orthonormal_basis, spatial_profile, Activation, AugmentedLayout, CovarianceMatrix, Matrix,
    ProjectionMatrix, SubspaceSelector,
};
use common::{low_rank_strategy, matrix_strategy};
use proptest::prelude::*;

fn activations() -> Vec<Activation> {
    vec![
        Activation::Linear,
        Activation::Relu,
        Activation::Abs,
        Activation::leaky_relu(0.2),
        Activation::leaky_relu(-0.5),
        Activation::pseudo_random(),
        Activation::PseudoRandom { sigma: 0.7 },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmented_covariance_is_psd(a in matrix_strategy(3, 4), m in 1usize..4) {
        let sigma = CovarianceMatrix::new(a.matmul(&a.transpose()).unwrap().symmetrized()).unwrap();
        for act in activations() {
            let st = build_augmented_covariance(&sigma, &act, m).unwrap();
            prop_assert!(st.entries().is_symmetric(0.0));
            let eig = symmetric_eigen(st.entries()).unwrap();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(min >= -1e-10, "{act}: {min}");
        }
    }

    #[test]
    fn augmented_projection_is_orthonormal(p in matrix_strategy(4, 3)) {
        prop_assume!((0..3).all(|j| p.column_norm_sq(j) > 1e-6));
        let p = ProjectionMatrix::normalized(p).unwrap();
        let pt = build_augmented_projection(&p);
        let gram = pt.tr_matmul(&pt).unwrap();
        prop_assert!(gram.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn stacked_basis_preserves_capacity(m in low_rank_strategy(5, 3, 2), blocks in 1usize..5, s in matrix_strategy(5, 2)) {
        let k = orthonormal_basis(&m, 1e-10).unwrap();
        let stacked = linear_stacked_basis(&k, blocks).unwrap();
        let layout = AugmentedLayout::standard(5, blocks);
        let aug = augmented_spatial_profile(&stacked, &layout).unwrap();
        prop_assert!(aug.max_abs_diff(&spatial_profile(&k)) < 1e-10);
        let sel = SubspaceSelector::new(orthonormal_basis(&s, 1e-10).unwrap().columns().clone()).unwrap();
        let lifted = lift_selector(&sel, blocks);
        let a = capacity_of_subspace(&stacked, &lifted).unwrap();
        let b = capacity_of_subspace(&k, &sel).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn nu_is_monotone_in_leaky_slope() {
    let slopes: Vec<f64> = (0..=200).map(|k| -1.0 + k as f64 / 100.0).collect();
    let nus: Vec<f64> = slopes
        .iter()
        .map(|&a| decoupling_nu(&Activation::leaky_relu(a)).unwrap())
        .collect();
    assert!(nus[0].abs() < 1e-15);
    assert!((nus[200] - 1.0).abs() < 1e-15);
    for w in nus.windows(2) {
        assert!(w[1] >= w[0]);
    }
}

#[test]
fn monte_carlo_matches_piecewise_closed_forms() {
    for (k, act) in activations().into_iter().enumerate() {
        let r = estimate_nu_monte_carlo(&act, 100_000, 1000 + k as u64).unwrap();
        let nu = decoupling_nu(&act).unwrap();
        assert!(
            (r.nu_hat - nu).abs() <= 4.0 * r.stderr.max(1e-300),
            "{act}: {} vs {nu} (stderr {})",
            r.nu_hat,
            r.stderr
        );
    }
}

/// Averaged over seeds, the Monte Carlo error of `ν̂` halves when `N` quadruples.
#[test]
fn monte_carlo_error_scales_as_inverse_root_n() {
    let act = Activation::Relu;
    let mean_abs_err = |n: usize| -> f64 {
        (0..64u64)
            .map(|s| (estimate_nu_monte_carlo(&act, n, s).unwrap().nu_hat - 0.5).abs())
            .sum::<f64>()
            / 64.0
    };
    let e1 = mean_abs_err(4_000);
    let e2 = mean_abs_err(16_000);
    let ratio = e1 / e2;
    assert!((1.4..=2.6).contains(&ratio), "ratio {ratio}");
    assert_eq!(DEFAULT_SHARDS, 8);
}
