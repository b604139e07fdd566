mod common;

use capnet::{
    capacity_of_subspace, gram_capacity_basis, orthonormal_basis, spatial_profile, CapacityBasis,
    Matrix, ParamMap, SubspaceSelector,
};
use common::{gram_schmidt, low_rank_strategy, matrix_strategy, projector_of};
use proptest::prelude::*;

const TOL: f64 = 1e-10;

fn random_orthogonal(m: &Matrix<f64>) -> Matrix<f64> {
    orthonormal_basis(m, TOL).unwrap().columns().clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_matches_gram_schmidt(m in (4usize..9, 2usize..7).prop_flat_map(|(r, c)| low_rank_strategy(r, c, 3))) {
        let k = orthonormal_basis(&m, TOL).unwrap();
        let gs = gram_schmidt(&m, 1e-8);
        prop_assert_eq!(k.rank(), gs.len());
        let diff = k.projector().sub(&projector_of(&gs, m.nrows())).unwrap();
        prop_assert!(diff.frobenius_norm() < 1e-8);
    }

    #[test]
    fn total_capacity_is_rank(m in low_rank_strategy(7, 5, 3)) {
        let k = orthonormal_basis(&m, TOL).unwrap();
        let profile = spatial_profile(&k);
        prop_assert!((profile.total() - k.rank() as f64).abs() < 1e-9);
        prop_assert!(profile.values().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn additivity_over_partitions(m in low_rank_strategy(6, 4, 4), q in matrix_strategy(6, 6), cut in 1usize..5) {
        let k = orthonormal_basis(&m, TOL).unwrap();
        let q = random_orthogonal(&q);
        prop_assume!(q.ncols() == 6);
        let cut2 = (cut + 1).min(5);
        let parts = [(0..cut).collect::<Vec<_>>(), (cut..cut2).collect(), (cut2..6).collect()];
        let mut total = 0.0;
        for part in parts.iter().filter(|p| !p.is_empty()) {
            let s = SubspaceSelector::new(q.select_columns(part)).unwrap();
            total += capacity_of_subspace(&k, &s).unwrap();
        }
        prop_assert!((total - k.rank() as f64).abs() < 1e-9);
    }

    #[test]
    fn monotone_in_subspace(m in low_rank_strategy(6, 4, 3), q in matrix_strategy(6, 6), a in 1usize..6) {
        let k = orthonormal_basis(&m, TOL).unwrap();
        let q = random_orthogonal(&q);
        prop_assume!(q.ncols() == 6);
        let small = SubspaceSelector::new(q.select_columns(&(0..a).collect::<Vec<_>>())).unwrap();
        let large = SubspaceSelector::new(q.select_columns(&(0..=a).collect::<Vec<_>>())).unwrap();
        let cs = capacity_of_subspace(&k, &small).unwrap();
        let cl = capacity_of_subspace(&k, &large).unwrap();
        prop_assert!(cl >= cs - 1e-12);
    }

    #[test]
    fn gram_and_svd_agree(j in (3usize..8, 1usize..6).prop_flat_map(|(m, p)| low_rank_strategy(m, p, 2.min(p)))) {
        let params = ParamMap::new(j.clone()).unwrap();
        let a = gram_capacity_basis(&params, TOL).unwrap();
        let b = orthonormal_basis(&j, TOL).unwrap();
        let diff = a.projector().sub(&b.projector()).unwrap();
        prop_assert!(diff.frobenius_norm() < 1e-8);
    }

    #[test]
    fn rotation_invariance(m in low_rank_strategy(6, 3, 3), r in matrix_strategy(3, 3), s in matrix_strategy(6, 2)) {
        let k = orthonormal_basis(&m, TOL).unwrap();
        prop_assume!(k.rank() == 3);
        let rot = random_orthogonal(&r);
        prop_assume!(rot.ncols() == 3);
        let rotated = CapacityBasis::new(k.columns().matmul(&rot).unwrap()).unwrap();
        let sel = SubspaceSelector::new(random_orthogonal(&s)).unwrap();
        let a = capacity_of_subspace(&k, &sel).unwrap();
        let b = capacity_of_subspace(&rotated, &sel).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn single_precision_tracks_double(m in low_rank_strategy(5, 3, 2)) {
        let k64 = orthonormal_basis(&m, TOL).unwrap();
        let m32 = Matrix::<f32>::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] as f32);
        let k32 = orthonormal_basis(&m32, 1e-4).unwrap();
        prop_assume!(k64.rank() == k32.rank());
        let p64 = spatial_profile(&k64);
        let p32 = spatial_profile(&k32);
        for (a, b) in p64.values().iter().zip(p32.values()) {
            prop_assert!((a - f64::from(*b)).abs() < 1e-3);
        }
    }
}

#[test]
fn zero_matrix_has_no_capacity() {
    let k = orthonormal_basis(&Matrix::<f64>::zeros(4, 3), TOL).unwrap();
    assert_eq!(k.rank(), 0);
    assert_eq!(spatial_profile(&k).total(), 0.0);
}

#[test]
fn non_finite_input_is_rejected() {
    let mut m = Matrix::<f64>::identity(2);
    m[(0, 1)] = f64::NAN;
    assert!(orthonormal_basis(&m, TOL).is_err());
}
