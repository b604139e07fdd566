//! Backward propagation of spatial capacity through pseudo-random layers.
//!
//! A layer with weights `P` maps feature capacity to input capacity through
//! the column-stochastic `D = P ∘ P`; a stack of layers composes these
//! top-down, `κ⁰ = D_1 ⋯ D_L κ^L`, conserving the total.

use serde::{Deserialize, Serialize};

use crate::augment::Activation;
use crate::capacity::{normalize_columns, SpatialCapacity};
use crate::error::{CapacityError, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Column-stochastic, entrywise non-negative `n_in × n_out` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationOperator<T> {
    matrix: Matrix<T>,
}

impl<T: Real> PropagationOperator<T> {
    pub fn new(matrix: Matrix<T>) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(CapacityError::NonFinite("propagation operator".into()));
        }
        let floor = -T::tol(1e-12);
        if let Some(bad) = matrix.as_slice().iter().find(|&&x| x < floor) {
            return Err(CapacityError::InvalidInput(format!(
                "propagation operator has a negative entry ({bad})"
            )));
        }
        let tol = T::tol(1e-10);
        for (j, s) in matrix.column_sums().into_iter().enumerate() {
            if (s - T::one()).abs() > tol {
                return Err(CapacityError::InvalidInput(format!(
                    "propagation operator column {j} sums to {s}, expected 1"
                )));
            }
        }
        Ok(PropagationOperator { matrix })
    }

    pub fn identity(n: usize) -> Self {
        PropagationOperator {
            matrix: Matrix::identity(n),
        }
    }

    /// All entries `1/n_in`.
    pub fn uniform(n_in: usize, n_out: usize) -> Self {
        let w = T::one() / T::from_count(n_in);
        PropagationOperator {
            matrix: Matrix::from_fn(n_in, n_out, |_, _| w),
        }
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn n_in(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.matrix.ncols()
    }
}

/// `D_ij = p_ij² / Σ_i p_ij²`. Raw weights are accepted; each column is
/// renormalised first. Zero columns are rejected.
pub fn propagation_matrix<T: Real>(weights: &impl AsRef<Matrix<T>>) -> Result<PropagationOperator<T>> {
    let unit = normalize_columns(weights.as_ref())?;
    Ok(PropagationOperator {
        matrix: unit.hadamard_square(),
    })
}

/// Differential layer `φ(Y) = Y + √ε f(PᵀY)`: `D = I + ε/(1+ε)·(P∘P − I)`.
pub fn differential_propagation_matrix<T: Real>(
    weights: &impl AsRef<Matrix<T>>,
    eps: T,
) -> Result<PropagationOperator<T>> {
    let w = weights.as_ref();
    if !w.is_square() {
        return Err(CapacityError::InvalidInput(format!(
            "differential layer needs square weights, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    if !(eps > T::zero() && eps.is_finite()) {
        return Err(CapacityError::InvalidInput(format!("eps must be > 0, got {eps}")));
    }
    let pp = propagation_matrix(weights)?.matrix;
    let n = w.nrows();
    let rate = eps / (T::one() + eps);
    let matrix = Matrix::from_fn(n, n, |i, j| {
        let id = if i == j { T::one() } else { T::zero() };
        id + rate * (pp[(i, j)] - id)
    });
    Ok(PropagationOperator { matrix })
}

/// `κ = D κ^φ`.
pub fn propagate_single<T: Real>(
    d: &PropagationOperator<T>,
    kappa_phi: &SpatialCapacity<T>,
) -> Result<SpatialCapacity<T>> {
    if kappa_phi.len() != d.n_out() {
        return Err(CapacityError::mismatch(
            "propagate_single: feature capacity length",
            d.n_out(),
            kappa_phi.len(),
        ));
    }
    let out = d.matrix.matvec(kappa_phi.values())?;
    Ok(SpatialCapacity::from_trusted(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerFlavor {
    Standard,
    /// `D = I + εΔ`.
    Residual,
    Differential { eps: f64 },
}

/// One layer of a [`LayerChain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChainLayer<T> {
    pub operator: PropagationOperator<T>,
    pub activation: Activation,
    pub flavor: LayerFlavor,
}

impl<T: Real> ChainLayer<T> {
    pub fn new(operator: PropagationOperator<T>, activation: Activation, flavor: LayerFlavor) -> Self {
        ChainLayer {
            operator,
            activation,
            flavor,
        }
    }

    /// Pseudo-random dense layer with the given raw weights.
    pub fn dense(weights: &Matrix<T>) -> Result<Self> {
        Ok(Self::new(
            propagation_matrix(weights)?,
            Activation::pseudo_random(),
            LayerFlavor::Standard,
        ))
    }

    pub fn differential(weights: &Matrix<T>, eps: T) -> Result<Self> {
        Ok(Self::new(
            differential_propagation_matrix(weights, eps)?,
            Activation::pseudo_random(),
            LayerFlavor::Differential { eps: eps.as_f64() },
        ))
    }
}

/// Layers ordered from the input side: `layers[0]` is layer 1, the last entry is layer `L`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerChain<T> {
    pub layers: Vec<ChainLayer<T>>,
}

impl<T: Real> LayerChain<T> {
    pub fn new(layers: Vec<ChainLayer<T>>) -> Self {
        LayerChain { layers }
    }

    /// Pseudo-random layers built directly from operators.
    pub fn from_operators(ops: Vec<PropagationOperator<T>>, flavor: LayerFlavor) -> Self {
        LayerChain {
            layers: ops
                .into_iter()
                .map(|op| ChainLayer::new(op, Activation::pseudo_random(), flavor))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Sub-chain made of the top `depth` layers.
    pub fn top(&self, depth: usize) -> Self {
        let start = self.layers.len().saturating_sub(depth);
        LayerChain {
            layers: self.layers[start..].to_vec(),
        }
    }

    /// Checks adjacent dimensions and closed-form eligibility.
    pub fn validate(&self) -> Result<()> {
        for (idx, layer) in self.layers.iter().enumerate() {
            if !layer.activation.is_pseudo_random() {
                return Err(CapacityError::Unsupported(format!(
                    "layer {} uses activation '{}'; closed-form chain propagation requires pseudo_random",
                    idx + 1,
                    layer.activation
                )));
            }
            if let Some(next) = self.layers.get(idx + 1) {
                if layer.operator.n_out() != next.operator.n_in() {
                    return Err(CapacityError::mismatch(
                        format!("layer {} output vs layer {} input", idx + 1, idx + 2),
                        next.operator.n_in(),
                        layer.operator.n_out(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Profiles `κ^l` for `l = 0..=L`, index `l` holding layer `l`'s capacity
/// (`[L]` is `kappa_top`, `[0]` the input space).
pub fn propagate_chain<T: Real>(
    chain: &LayerChain<T>,
    kappa_top: &SpatialCapacity<T>,
) -> Result<Vec<SpatialCapacity<T>>> {
    chain.validate()?;
    if let Some(last) = chain.layers.last() {
        if last.operator.n_out() != kappa_top.len() {
            return Err(CapacityError::mismatch(
                format!("layer {} output vs top capacity", chain.len()),
                last.operator.n_out(),
                kappa_top.len(),
            ));
        }
    }
    let mut profiles = Vec::with_capacity(chain.len() + 1);
    profiles.push(kappa_top.clone());
    for layer in chain.layers.iter().rev() {
        let next = propagate_single(&layer.operator, profiles.last().expect("non-empty"))?;
        profiles.push(next);
    }
    profiles.reverse();
    Ok(profiles)
}
