//! Orthonormal capacity bases, subspace capacities and spatial profiles.
//!
//! A model that is linear in some space with constrained directions spanned
//! by the orthonormal columns of `K` allocates `‖Kᵀ S‖²_F` of capacity to the
//! subspace spanned by the orthonormal columns of `S`. Summed over any
//! orthonormal partition of the space this gives `rank(K)`, the number of
//! independent parameters.

use serde::{Deserialize, Serialize};

use crate::error::{CapacityError, Result};
use crate::linalg::{jacobi_svd_left, symmetric_eigen};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Default relative rank threshold.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

fn ensure_finite<T: Real>(m: &Matrix<T>, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(CapacityError::NonFinite(what.to_string()))
    }
}

/// Largest deviation of `MᵀM` from the identity.
pub fn orthonormality_defect<T: Real>(m: &Matrix<T>) -> T {
    let gram = m.tr_matmul(m).expect("square gram");
    gram.sub(&Matrix::identity(m.ncols())).expect("same shape").max_abs()
}

/// Symmetric positive semi-definite covariance `E[Y Yᵀ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMatrix<T> {
    entries: Matrix<T>,
}

impl<T: Real> CovarianceMatrix<T> {
    /// Validates symmetry and positive semi-definiteness (eigenvalues ≥ −tol·‖Σ‖).
    pub fn new(entries: Matrix<T>) -> Result<Self> {
        ensure_finite(&entries, "covariance")?;
        let scale = entries.max_abs().max(T::one());
        if !entries.is_symmetric(T::tol(1e-10) * scale) {
            return Err(CapacityError::InvalidInput(
                "covariance matrix is not symmetric".into(),
            ));
        }
        let eig = symmetric_eigen(&entries)?;
        let norm = entries.frobenius_norm();
        if let Some(&min) = eig.eigenvalues.last() {
            if min < -T::tol(1e-10) * norm.max(T::one()) {
                return Err(CapacityError::InvalidInput(format!(
                    "covariance matrix is not positive semi-definite (eigenvalue {min})"
                )));
            }
        }
        Ok(CovarianceMatrix { entries })
    }

    /// Skips the eigenvalue check; callers guarantee PSD by construction.
    pub(crate) fn from_trusted(entries: Matrix<T>) -> Self {
        CovarianceMatrix { entries }
    }

    pub fn identity(dim: usize) -> Self {
        CovarianceMatrix {
            entries: Matrix::identity(dim),
        }
    }

    pub fn scaled_identity(dim: usize, variance: T) -> Self {
        CovarianceMatrix {
            entries: Matrix::identity(dim).scale(variance),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Matrix<T> {
        &self.entries
    }

    /// `Some(σ²)` when the matrix is `σ² I` within `tol`.
    pub fn as_scaled_identity(&self, tol: T) -> Option<T> {
        let n = self.dim();
        if n == 0 {
            return None;
        }
        let s = self.entries[(0, 0)];
        let ok = (0..n).all(|i| {
            (0..n).all(|j| {
                let expected = if i == j { s } else { T::zero() };
                (self.entries[(i, j)] - expected).abs() <= tol
            })
        });
        (ok && s > T::zero()).then_some(s)
    }
}

/// Layer weights `P` with unit-norm, pairwise distinct columns `p_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix<T> {
    weights: Matrix<T>,
}

impl<T: Real> ProjectionMatrix<T> {
    pub fn new(weights: Matrix<T>) -> Result<Self> {
        ensure_finite(&weights, "projection")?;
        let tol = T::tol(1e-12);
        for j in 0..weights.ncols() {
            let norm = weights.column_norm_sq(j).sqrt();
            if (norm - T::one()).abs() > tol {
                return Err(CapacityError::InvalidInput(format!(
                    "projection column {j} has norm {norm}, expected 1"
                )));
            }
        }
        for a in 0..weights.ncols() {
            for b in (a + 1)..weights.ncols() {
                if (0..weights.nrows()).all(|i| weights[(i, a)] == weights[(i, b)]) {
                    return Err(CapacityError::InvalidInput(format!(
                        "projection columns {a} and {b} are identical"
                    )));
                }
            }
        }
        Ok(ProjectionMatrix { weights })
    }

    /// Rescales every column to unit norm first. Zero columns are rejected.
    pub fn normalized(weights: Matrix<T>) -> Result<Self> {
        Self::new(normalize_columns(&weights)?)
    }

    pub fn n_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        self.weights.column(j)
    }
}

impl<T: Real> AsRef<Matrix<T>> for ProjectionMatrix<T> {
    fn as_ref(&self) -> &Matrix<T> {
        &self.weights
    }
}

/// Divides every column by its Euclidean norm.
pub fn normalize_columns<T: Real>(weights: &Matrix<T>) -> Result<Matrix<T>> {
    ensure_finite(weights, "weights")?;
    let mut out = weights.clone();
    for j in 0..weights.ncols() {
        let norm = weights.column_norm_sq(j).sqrt();
        if norm == T::zero() {
            return Err(CapacityError::InvalidInput(format!(
                "weight column {j} is identically zero"
            )));
        }
        let col: Vec<T> = weights.column(j).into_iter().map(|x| x / norm).collect();
        out.set_column(j, &col);
    }
    Ok(out)
}

/// Orthonormal columns spanning the constrained directions (`K`, `K^φ`, `K̃`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityBasis<T> {
    columns: Matrix<T>,
}

impl<T: Real> CapacityBasis<T> {
    pub fn new(columns: Matrix<T>) -> Result<Self> {
        ensure_finite(&columns, "capacity basis")?;
        if columns.ncols() > columns.nrows() {
            return Err(CapacityError::InvalidInput(format!(
                "rank {} exceeds ambient dimension {}",
                columns.ncols(),
                columns.nrows()
            )));
        }
        let defect = orthonormality_defect(&columns);
        if defect > T::tol(1e-10) {
            return Err(CapacityError::InvalidInput(format!(
                "capacity basis columns are not orthonormal (defect {defect})"
            )));
        }
        Ok(CapacityBasis { columns })
    }

    pub(crate) fn from_trusted(columns: Matrix<T>) -> Self {
        CapacityBasis { columns }
    }

    pub fn empty(ambient_dim: usize) -> Self {
        CapacityBasis {
            columns: Matrix::zeros(ambient_dim, 0),
        }
    }

    /// Canonical vectors `e_i` for the listed coordinates.
    pub fn coordinates(ambient_dim: usize, indices: &[usize]) -> Result<Self> {
        Ok(CapacityBasis {
            columns: coordinate_columns(ambient_dim, indices)?,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &Matrix<T> {
        &self.columns
    }

    /// Projector `K Kᵀ` onto the spanned subspace.
    pub fn projector(&self) -> Matrix<T> {
        self.columns
            .matmul(&self.columns.transpose())
            .expect("conformable")
    }
}

fn coordinate_columns<T: Real>(ambient_dim: usize, indices: &[usize]) -> Result<Matrix<T>> {
    let mut m = Matrix::zeros(ambient_dim, indices.len());
    for (k, &i) in indices.iter().enumerate() {
        if i >= ambient_dim {
            return Err(CapacityError::InvalidInput(format!(
                "coordinate {i} out of range for dimension {ambient_dim}"
            )));
        }
        if indices[..k].contains(&i) {
            return Err(CapacityError::InvalidInput(format!("coordinate {i} repeated")));
        }
        m[(i, k)] = T::one();
    }
    Ok(m)
}

/// Orthonormal basis `S` of a subspace whose capacity is queried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceSelector<T> {
    basis: Matrix<T>,
}

impl<T: Real> SubspaceSelector<T> {
    pub fn new(basis: Matrix<T>) -> Result<Self> {
        ensure_finite(&basis, "subspace selector")?;
        let defect = orthonormality_defect(&basis);
        if defect > T::tol(1e-10) {
            return Err(CapacityError::InvalidInput(format!(
                "subspace selector columns are not orthonormal (defect {defect})"
            )));
        }
        Ok(SubspaceSelector { basis })
    }

    pub fn coordinate(ambient_dim: usize, index: usize) -> Result<Self> {
        Self::coordinates(ambient_dim, &[index])
    }

    pub fn coordinates(ambient_dim: usize, indices: &[usize]) -> Result<Self> {
        Ok(SubspaceSelector {
            basis: coordinate_columns(ambient_dim, indices)?,
        })
    }

    pub fn full(ambient_dim: usize) -> Self {
        SubspaceSelector {
            basis: Matrix::identity(ambient_dim),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Matrix<T> {
        &self.basis
    }
}

/// Per-coordinate capacities `κ = (κ_1, …, κ_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpatialCapacity<T> {
    values: Vec<T>,
}

impl<T: Real> SpatialCapacity<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        let floor = -T::tol(1e-10);
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(CapacityError::NonFinite(format!("capacity entry {i}")));
            }
            if v < floor {
                return Err(CapacityError::InvalidInput(format!(
                    "capacity entry {i} is negative ({v})"
                )));
            }
        }
        Ok(SpatialCapacity { values })
    }

    pub(crate) fn from_trusted(values: Vec<T>) -> Self {
        SpatialCapacity { values }
    }

    /// All of `mass` on coordinate `index`.
    pub fn dirac(len: usize, index: usize, mass: T) -> Result<Self> {
        if index >= len {
            return Err(CapacityError::InvalidInput(format!(
                "dirac index {index} out of range for length {len}"
            )));
        }
        let mut values = vec![T::zero(); len];
        values[index] = mass;
        Self::new(values)
    }

    pub fn uniform(len: usize, total: T) -> Self {
        SpatialCapacity {
            values: vec![total / T::from_count(len); len],
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> T {
        self.values.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &SpatialCapacity<T>) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Mean position, treating the normalised profile as a probability mass.
    pub fn mean_position(&self) -> T {
        let total = self.total();
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| T::from_count(i) * v)
            .sum::<T>()
            / total
    }

    /// Standard deviation about [`mean_position`](Self::mean_position).
    pub fn spread(&self) -> T {
        let total = self.total();
        let mean = self.mean_position();
        let var = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let d = T::from_count(i) - mean;
                d * d * v
            })
            .sum::<T>()
            / total;
        var.max(T::zero()).sqrt()
    }
}

/// Jacobian `∂A/∂W` of the last-layer coefficients `A ∈ ℝ^m` with respect to
/// the parameters `W ∈ ℝ^p`, stored as an `m × p` matrix (row = coefficient,
/// column = parameter). For `A = Bᵀ W` this is `Bᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMap<T> {
    jacobian: Matrix<T>,
}

impl<T: Real> ParamMap<T> {
    pub fn new(jacobian: Matrix<T>) -> Result<Self> {
        ensure_finite(&jacobian, "parameter jacobian")?;
        Ok(ParamMap { jacobian })
    }

    /// Free last layer: every coefficient is its own parameter.
    pub fn free(m: usize) -> Self {
        ParamMap {
            jacobian: Matrix::identity(m),
        }
    }

    /// `A = W` on the listed coordinates, zero elsewhere.
    pub fn selector(m: usize, coordinates: &[usize]) -> Result<Self> {
        Ok(ParamMap {
            jacobian: coordinate_columns(m, coordinates)?,
        })
    }

    pub fn jacobian(&self) -> &Matrix<T> {
        &self.jacobian
    }

    pub fn n_coefficients(&self) -> usize {
        self.jacobian.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.jacobian.ncols()
    }
}

/// Orthonormal basis of the column space of `m`, dropping singular values
/// `≤ tol·σ_max`. An all-zero input yields a rank-0 basis.
pub fn orthonormal_basis<T: Real>(m: &Matrix<T>, tol: T) -> Result<CapacityBasis<T>> {
    ensure_finite(m, "orthonormal_basis input")?;
    if tol.is_nan() || tol <= T::zero() {
        return Err(CapacityError::InvalidInput("rank tolerance must be > 0".into()));
    }
    let svd = jacobi_svd_left(m);
    let sigma_max = svd.singular_values.first().copied().unwrap_or(T::zero());
    if sigma_max == T::zero() {
        return Ok(CapacityBasis::empty(m.nrows()));
    }
    let rank = svd
        .singular_values
        .iter()
        .take_while(|&&s| s > tol * sigma_max)
        .count()
        .min(m.nrows());
    let keep: Vec<usize> = (0..rank).collect();
    Ok(CapacityBasis::from_trusted(svd.u.select_columns(&keep)))
}

/// `K^φ`: eigenvectors of the Gram matrix `(∂A/∂W)(∂A/∂W)ᵀ` with eigenvalue
/// `> tol·λ_max`.
pub fn gram_capacity_basis<T: Real>(params: &ParamMap<T>, tol: T) -> Result<CapacityBasis<T>> {
    let j = params.jacobian();
    ensure_finite(j, "parameter jacobian")?;
    let gram = j.matmul(&j.transpose())?;
    let eig = symmetric_eigen(&gram)?;
    let lambda_max = eig.eigenvalues.first().copied().unwrap_or(T::zero());
    if lambda_max <= T::zero() {
        return Ok(CapacityBasis::empty(j.nrows()));
    }
    let keep: Vec<usize> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .take_while(|(_, &l)| l > tol * lambda_max)
        .map(|(k, _)| k)
        .collect();
    Ok(CapacityBasis::from_trusted(eig.eigenvectors.select_columns(&keep)))
}

/// `κ(S) = ‖Kᵀ S‖²_F`.
pub fn capacity_of_subspace<T: Real>(k: &CapacityBasis<T>, s: &SubspaceSelector<T>) -> Result<T> {
    if k.ambient_dim() != s.ambient_dim() {
        return Err(CapacityError::mismatch(
            "capacity_of_subspace ambient dimension",
            k.ambient_dim(),
            s.ambient_dim(),
        ));
    }
    Ok(k.columns().tr_matmul(s.basis())?.frobenius_norm_sq())
}

/// Capacities along the canonical axes: `κ_i = ‖Kᵀ e_i‖²`, the squared row norms of `K`.
pub fn spatial_profile<T: Real>(k: &CapacityBasis<T>) -> SpatialCapacity<T> {
    let values = (0..k.ambient_dim())
        .map(|i| k.columns().row(i).iter().map(|&x| x * x).sum())
        .collect();
    SpatialCapacity::from_trusted(values)
}
