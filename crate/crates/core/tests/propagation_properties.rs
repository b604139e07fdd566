mod common;

use capnet::analyze::uniform_path_weight;
use capnet::deeplimit::{random_layer_chain, residual_chain, residual_generator, Boundary};
use capnet::{
    differential_propagation_matrix, enumerate_path_weights, max_path_weight, propagate_chain,
    propagate_single, propagation_matrix, LayerChain, LayerFlavor, Matrix, PropagationOperator,
    SpatialCapacity,
};
use common::{chain_product, matrix_strategy, standard_chain, stochastic};
use proptest::prelude::*;

fn kappa_strategy(n: usize) -> impl Strategy<Value = SpatialCapacity<f64>> {
    prop::collection::vec(0.0f64..3.0, n).prop_map(|v| SpatialCapacity::new(v).unwrap())
}

fn raw_weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn column_stochastic_from_any_weights(p in matrix_strategy(5, 4)) {
        prop_assume!((0..4).all(|j| p.column_norm_sq(j) > 1e-6));
        let d = propagation_matrix(&p).unwrap();
        for s in d.matrix().column_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_layer_conserves_and_stays_non_negative(raw in raw_weights(20), k in kappa_strategy(4)) {
        let d = stochastic(5, 4, &raw);
        let out = propagate_single(&d, &k).unwrap();
        prop_assert!((out.total() - k.total()).abs() < 1e-12);
        prop_assert!(out.values().iter().all(|&v| v >= 0.0));
        let max = out.values().iter().cloned().fold(0.0, f64::max);
        prop_assert!(max <= out.total() + 1e-12);
    }

    #[test]
    fn composition_is_exact(a in raw_weights(12), b in raw_weights(16), k in kappa_strategy(4)) {
        let d1 = stochastic(3, 4, &a);
        let d2 = stochastic(4, 4, &b);
        let chain = standard_chain(vec![d1.clone(), d2.clone()]);
        let profiles = propagate_chain(&chain, &k).unwrap();
        let nested = propagate_single(&d1, &propagate_single(&d2, &k).unwrap()).unwrap();
        prop_assert_eq!(&profiles[0], &nested);
    }

    #[test]
    fn differential_layers_conserve(p in matrix_strategy(4, 4), eps in 0.01f64..2.0, k in kappa_strategy(4)) {
        prop_assume!((0..4).all(|j| p.column_norm_sq(j) > 1e-6));
        let d = differential_propagation_matrix(&p, eps).unwrap();
        let out = propagate_single(&d, &k).unwrap();
        prop_assert!((out.total() - k.total()).abs() < 1e-12);
        prop_assert!(out.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn path_sums_equal_matrix_product(raws in prop::collection::vec(raw_weights(9), 1..4), a in 0usize..3, b in 0usize..3) {
        let ops: Vec<_> = raws.iter().map(|r| stochastic(3, 3, r)).collect();
        let chain = standard_chain(ops);
        let e = enumerate_path_weights(&chain, a, b).unwrap();
        let product = chain_product(&chain);
        prop_assert!((e.total_weight - product[(a, b)]).abs() < 1e-12);
        prop_assert!(e.max_path_weight <= 1.0);
    }

    #[test]
    fn product_rows_sum_to_one(raws in prop::collection::vec(raw_weights(16), 1..4), b in 0usize..4) {
        let chain = standard_chain(raws.iter().map(|r| stochastic(4, 4, r)).collect());
        let total: f64 = (0..4).map(|a| enumerate_path_weights(&chain, a, b).unwrap().total_weight).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn max_path_weight_bounded(raws in prop::collection::vec(raw_weights(16), 1..6)) {
        let chain = standard_chain(raws.iter().map(|r| stochastic(4, 4, r)).collect());
        let w = max_path_weight(&chain).unwrap();
        prop_assert!(w.weight <= 1.0 && w.weight >= 0.0);
        let diag_below_one = chain.layers.iter().all(|l| (0..4).all(|i| l.operator.matrix()[(i, i)] < 1.0));
        if diag_below_one {
            prop_assert!(w.weight < 1.0);
        }
    }
}

#[test]
fn long_chains_conserve_capacity() {
    for seed in 0..4 {
        let chain = random_layer_chain::<f64>(64, 1.0, 0.2, 1000, seed).unwrap();
        let top = SpatialCapacity::dirac(64, 10, 1.0).unwrap();
        let profiles = propagate_chain(&chain, &top).unwrap();
        for p in &profiles {
            assert!((p.total() - 1.0).abs() < 1e-9);
            assert!(p.values().iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn uniform_operator_flattens_in_one_step() {
    let d = PropagationOperator::<f64>::uniform(5, 3);
    let out = propagate_single(&d, &SpatialCapacity::new(vec![3.0, 0.0, 2.0]).unwrap()).unwrap();
    for v in out.values() {
        assert!((v - 1.0).abs() < 1e-15);
    }
}

#[test]
fn differential_first_order() {
    let p = Matrix::from_rows(&[vec![0.6, 0.8, 0.0], vec![0.8, 0.0, 0.6], vec![0.0, 0.6, 0.8]]).unwrap();
    let pp = propagation_matrix(&p).unwrap();
    let eps = 1e-3;
    let d = differential_propagation_matrix(&p, eps).unwrap();
    let first = Matrix::from_fn(3, 3, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id + eps * (pp.matrix()[(i, j)] - id)
    });
    assert!(d.matrix().sub(&first).unwrap().max_abs() <= 1e-5);
}

#[test]
fn tridiagonal_path_enumeration() {
    let g = residual_generator::<f64>(4, 0.2, 1.0, Boundary::Reflecting).unwrap();
    let chain = residual_chain(&g, 0.3, 3).unwrap();
    let product = chain_product(&chain);
    for a in 0..4 {
        for b in 0..4 {
            let e = enumerate_path_weights(&chain, a, b).unwrap();
            assert!((e.total_weight - product[(a, b)]).abs() < 1e-12);
        }
    }
}

#[test]
fn uniform_layers_have_equal_paths() {
    let chain = LayerChain::from_operators(vec![PropagationOperator::<f64>::uniform(2, 2); 3], LayerFlavor::Standard);
    let e = enumerate_path_weights(&chain, 1, 0).unwrap();
    assert_eq!(e.max_path_weight, uniform_path_weight::<f64>(2, 3).unwrap());
    let n = 4;
    let chain = LayerChain::from_operators(vec![PropagationOperator::<f64>::uniform(n, n); 5], LayerFlavor::Standard);
    let w = max_path_weight(&chain).unwrap();
    assert!((w.weight - uniform_path_weight::<f64>(n, 5).unwrap()).abs() < 1e-16);
}

/// Gap between `Π(1 + εΔ_ii)` and `exp(T Δ_ii)` at fixed `T = εL` is first order in `ε`.
#[test]
fn continuum_estimate_gap_is_first_order() {
    let g = residual_generator::<f64>(9, 0.0, 0.5, Boundary::Periodic).unwrap();
    let gaps: Vec<f64> = [(0.1, 10), (0.05, 20), (0.025, 40)]
        .iter()
        .map(|&(eps, l)| {
            let w = max_path_weight(&residual_chain(&g, eps, l).unwrap()).unwrap();
            (w.weight - w.continuum_estimate).abs() / eps
        })
        .collect();
    for pair in gaps.windows(2) {
        assert!((pair[1] / pair[0] - 1.0).abs() < 0.15, "{gaps:?}");
    }
}
