#![allow(dead_code)]

use capnet::{LayerChain, LayerFlavor, Matrix, PropagationOperator};
use proptest::prelude::*;

/// Modified Gram–Schmidt with one re-orthogonalisation pass; columns whose
/// residual falls below `tol` times the largest input norm are dropped.
pub fn gram_schmidt(m: &Matrix<f64>, tol: f64) -> Vec<Vec<f64>> {
    let scale = (0..m.ncols())
        .map(|j| m.column_norm_sq(j).sqrt())
        .fold(0.0, f64::max);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..m.ncols() {
        let mut v = m.column(j);
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= d * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > tol * scale && norm > 0.0 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

pub fn projector_of(vectors: &[Vec<f64>], dim: usize) -> Matrix<f64> {
    Matrix::from_fn(dim, dim, |r, c| vectors.iter().map(|q| q[r] * q[c]).sum())
}

/// Column-stochastic matrix from arbitrary non-negative weights.
pub fn stochastic(rows: usize, cols: usize, raw: &[f64]) -> PropagationOperator<f64> {
    let mut m = Matrix::from_row_major(rows, cols, raw.to_vec()).unwrap();
    for j in 0..cols {
        let s: f64 = (0..rows).map(|i| m[(i, j)]).sum();
        for i in 0..rows {
            m[(i, j)] = if s > 0.0 { m[(i, j)] / s } else if i == 0 { 1.0 } else { 0.0 };
        }
    }
    PropagationOperator::new(m).unwrap()
}

pub fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_map(move |v| Matrix::from_row_major(rows, cols, v).unwrap())
}

/// `rows × cols` matrix of rank at most `rank` (a product of two factors).
pub fn low_rank_strategy(rows: usize, cols: usize, rank: usize) -> impl Strategy<Value = Matrix<f64>> {
    (matrix_strategy(rows, rank), matrix_strategy(rank, cols))
        .prop_map(|(a, b)| a.matmul(&b).unwrap())
}

pub fn chain_product(chain: &LayerChain<f64>) -> Matrix<f64> {
    let mut out = chain.layers[0].operator.matrix().clone();
    for layer in &chain.layers[1..] {
        out = out.matmul(layer.operator.matrix()).unwrap();
    }
    out
}

pub fn standard_chain(ops: Vec<PropagationOperator<f64>>) -> LayerChain<f64> {
    LayerChain::from_operators(ops, LayerFlavor::Standard)
}
