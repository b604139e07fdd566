//! Augmented input space of a layer `φ(Y) = f(Pᵀ Y)`.
//!
//! Writing `f(z) = η(z)·z` turns the layer into `Aᵀ P̃ᵀ Ỹ` with
//! `Ỹ = (η_1 y_1, …, η_1 y_n, …, η_m y_1, …, η_m y_n)` and `P̃` block diagonal
//! in the `p_j`. Augmented index `j·n + i` is the pair (block `j`, input `i`).
//! How strongly the activation decouples the blocks is the scale `ν` that
//! multiplies the off-diagonal blocks of `Σ̃ = E[Ỹ Ỹᵀ]`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{
    orthonormal_basis, orthonormality_defect, CapacityBasis, CovarianceMatrix, ProjectionMatrix,
    SpatialCapacity, DEFAULT_RANK_TOL,
};
use crate::error::{CapacityError, Result};
use crate::matrix::Matrix;
use crate::oracle::PseudoRandomSign;
use crate::scalar::Real;
use crate::seeding::derive_seed;

/// Pointwise activation `f`.
#[derive(Clone)]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu { slope: f64 },
    Abs,
    /// `f(z) = η(z)·z` with `η` a frozen i.i.d. `±σ` sign process.
    PseudoRandom { sigma: f64 },
    /// Arbitrary pointwise function; no closed-form augmented covariance.
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl Activation {
    pub fn pseudo_random() -> Self {
        Activation::PseudoRandom { sigma: 1.0 }
    }

    pub fn leaky_relu(slope: f64) -> Self {
        Activation::LeakyRelu { slope }
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Activation::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu { slope } if !slope.is_finite() => Err(
                CapacityError::InvalidInput(format!("leaky_relu slope {slope} is not finite")),
            ),
            Activation::PseudoRandom { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                CapacityError::InvalidInput(format!("pseudo_random sigma {sigma} must be > 0")),
            ),
            _ => Ok(()),
        }
    }

    /// `(α, β)` of `η(z) = α·1{z≤0} + β·1{z>0}`, normalised to `α² + β² = 2`.
    pub fn piecewise_slopes(&self) -> Option<(f64, f64)> {
        match *self {
            Activation::Linear => Some((1.0, 1.0)),
            Activation::Relu => Some((0.0, 2f64.sqrt())),
            Activation::Abs => Some((-1.0, 1.0)),
            Activation::LeakyRelu { slope } => {
                let scale = (2.0 / (1.0 + slope * slope)).sqrt();
                Some((slope * scale, scale))
            }
            Activation::PseudoRandom { .. } | Activation::Custom { .. } => None,
        }
    }

    /// Slopes `(a, b)` on the negative and positive half-lines before normalisation.
    fn raw_slopes(&self) -> Option<(f64, f64)> {
        match *self {
            Activation::Linear => Some((1.0, 1.0)),
            Activation::Relu => Some((0.0, 1.0)),
            Activation::Abs => Some((-1.0, 1.0)),
            Activation::LeakyRelu { slope } => Some((slope, 1.0)),
            Activation::PseudoRandom { .. } | Activation::Custom { .. } => None,
        }
    }

    pub fn is_pseudo_random(&self) -> bool {
        matches!(self, Activation::PseudoRandom { .. })
    }

    /// The multiplier `η(z) = f(z)/z`. `seed` fixes the pseudo-random realisation.
    /// For custom activations `η(0)` is taken as 0.
    pub fn eta(&self, z: f64, seed: u64) -> f64 {
        if let Some((alpha, beta)) = self.piecewise_slopes() {
            return if z <= 0.0 { alpha } else { beta };
        }
        match self {
            Activation::PseudoRandom { sigma } => PseudoRandomSign::new(seed, *sigma).eta(z),
            Activation::Custom { f, .. } => {
                if z == 0.0 {
                    0.0
                } else {
                    f(z) / z
                }
            }
            _ => unreachable!("piecewise kinds handled above"),
        }
    }

    /// `f(z) = η(z)·z`.
    pub fn apply(&self, z: f64, seed: u64) -> f64 {
        self.eta(z, seed) * z
    }
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Activation({self})")
    }
}

impl PartialEq for Activation {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Linear => write!(f, "linear"),
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu { slope } => write!(f, "leaky_relu:{slope}"),
            Activation::Abs => write!(f, "abs"),
            Activation::PseudoRandom { sigma } if *sigma == 1.0 => write!(f, "pseudo_random"),
            Activation::PseudoRandom { sigma } => write!(f, "pseudo_random:{sigma}"),
            Activation::Custom { name, .. } => write!(f, "custom:{name}"),
        }
    }
}

/// Grammar: `linear | relu | leaky_relu:<slope> | abs | pseudo_random[:<sigma>]`.
impl FromStr for Activation {
    type Err = CapacityError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let parse_arg = |a: &str| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| CapacityError::InvalidInput(format!("bad numeric argument in activation '{s}'")))
        };
        let act = match (head, arg) {
            ("linear", None) => Activation::Linear,
            ("relu", None) => Activation::Relu,
            ("abs", None) => Activation::Abs,
            ("leaky_relu", Some(a)) => Activation::LeakyRelu { slope: parse_arg(a)? },
            ("pseudo_random", None) => Activation::pseudo_random(),
            ("pseudo_random", Some(a)) => Activation::PseudoRandom { sigma: parse_arg(a)? },
            _ => {
                return Err(CapacityError::InvalidInput(format!(
                    "unknown activation '{s}' (expected linear | relu | leaky_relu:<slope> | abs | pseudo_random[:<sigma>])"
                )))
            }
        };
        act.validate()?;
        Ok(act)
    }
}

impl Serialize for Activation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Activation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Decoupling scale `ν`: 1 for linear, `(α+β)²/4` for the ReLU family, 0 for
/// pseudo-random activations.
pub fn decoupling_nu(act: &Activation) -> Result<f64> {
    act.validate()?;
    match act {
        Activation::PseudoRandom { .. } => Ok(0.0),
        Activation::Custom { name, .. } => Err(CapacityError::Unsupported(format!(
            "no closed-form decoupling scale for custom activation '{name}'"
        ))),
        _ => {
            // Equals (α+β)²/4.
            let (a, b) = act.raw_slopes().expect("piecewise kind");
            Ok((a + b) * (a + b) / (2.0 * (a * a + b * b)))
        }
    }
}

/// `E[η(z)]`, the coupling between a plain block and an `η` block.
fn mean_eta(act: &Activation) -> Result<f64> {
    match act {
        Activation::PseudoRandom { .. } => Ok(0.0),
        Activation::Custom { name, .. } => Err(CapacityError::Unsupported(format!(
            "no closed-form augmented covariance for custom activation '{name}'"
        ))),
        _ => {
            let (alpha, beta) = act.piecewise_slopes().expect("piecewise kind");
            Ok(0.5 * (alpha + beta))
        }
    }
}

/// Distribution of the pre-activations used by the Monte Carlo estimate of `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreActivationLaw {
    #[default]
    StandardNormal,
    /// Uniform on `[-1, 1]`.
    SymmetricUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecouplingReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub nu_hat: f64,
    pub stderr: f64,
    pub n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

/// Number of independently seeded shards used by Monte Carlo estimators.
pub const DEFAULT_SHARDS: usize = 8;

/// Monte Carlo estimate of `ν = E[η(z₁) η(z₂)] / E[η²]` for independent `z₁, z₂`.
///
/// Samples are split into `shards` blocks with seeds derived from `seed`; the
/// reduction runs in shard order so the result depends only on
/// `(seed, n_samples, shards)`.
pub fn estimate_nu_monte_carlo(
    act: &Activation,
    n_samples: usize,
    seed: u64,
) -> Result<DecouplingReport> {
    estimate_nu_with(act, n_samples, seed, PreActivationLaw::StandardNormal, DEFAULT_SHARDS)
}

pub fn estimate_nu_with(
    act: &Activation,
    n_samples: usize,
    seed: u64,
    law: PreActivationLaw,
    shards: usize,
) -> Result<DecouplingReport> {
    act.validate()?;
    if n_samples < 1000 {
        return Err(CapacityError::InvalidInput(format!(
            "Monte Carlo estimate of nu needs at least 1000 samples, got {n_samples}"
        )));
    }
    let shards = shards.clamp(1, n_samples);
    // The η realisation is shared by every shard; only the z draws differ.
    let eta_seed = derive_seed(seed, u64::MAX);
    let norm = match act {
        Activation::PseudoRandom { sigma } => sigma * sigma,
        _ => 1.0,
    };
    let partials: Vec<(f64, f64, usize)> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let count = n_samples / shards + usize::from(shard < n_samples % shards);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, shard as u64));
            let uniform = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
            let draw = |rng: &mut ChaCha8Rng| match law {
                PreActivationLaw::StandardNormal => StandardNormal.sample(rng),
                PreActivationLaw::SymmetricUniform => uniform.sample(rng),
            };
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..count {
                let z1: f64 = draw(&mut rng);
                let z2: f64 = draw(&mut rng);
                let x = act.eta(z1, eta_seed) * act.eta(z2, eta_seed) / norm;
                sum += x;
                sum_sq += x * x;
            }
            (sum, sum_sq, count)
        })
        .collect();
    let (sum, sum_sq, count) = partials
        .into_iter()
        .fold((0.0, 0.0, 0), |(a, b, c), (x, y, z)| (a + x, b + y, c + z));
    let n = count as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let caveat = match act {
        Activation::Custom { .. } => Some(
            "custom activation: raw E[eta eta'] without normalisation; closed-form theory does not apply"
                .to_string(),
        ),
        _ => None,
    };
    Ok(DecouplingReport {
        nu: decoupling_nu(act).ok(),
        nu_hat: mean,
        stderr: (var / n).sqrt(),
        n_samples: count,
        caveat,
    })
}

/// Which augmented construction a [`AugmentedSpace`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentedKind {
    /// `nm` entries `η_j y_i`.
    Standard,
    /// `n` plain inputs followed by the `n·n` entries `η_j y_i`.
    Differential,
}

/// Maps augmented indices back to (block, input) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedLayout {
    pub n_in: usize,
    pub n_out: usize,
    pub kind: AugmentedKind,
}

impl AugmentedLayout {
    pub fn standard(n_in: usize, n_out: usize) -> Self {
        AugmentedLayout {
            n_in,
            n_out,
            kind: AugmentedKind::Standard,
        }
    }

    pub fn differential(n: usize) -> Self {
        AugmentedLayout {
            n_in: n,
            n_out: n,
            kind: AugmentedKind::Differential,
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            AugmentedKind::Standard => self.n_in * self.n_out,
            AugmentedKind::Differential => self.n_in * (self.n_out + 1),
        }
    }

    /// `(block, input)`; block `None` is the plain-input block of a differential layout.
    pub fn locate(&self, index: usize) -> (Option<usize>, usize) {
        let n = self.n_in;
        match self.kind {
            AugmentedKind::Standard => (Some(index / n), index % n),
            AugmentedKind::Differential if index < n => (None, index),
            AugmentedKind::Differential => (Some((index - n) / n), index % n),
        }
    }

    /// Augmented index of `η_block · y_input`.
    pub fn index(&self, block: usize, input: usize) -> usize {
        match self.kind {
            AugmentedKind::Standard => block * self.n_in + input,
            AugmentedKind::Differential => self.n_in + block * self.n_in + input,
        }
    }

    /// Builds `Ỹ` from an input `y` and the per-output multipliers `η`.
    pub fn augment_input<T: Real>(&self, y: &[T], eta: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.dim());
        if self.kind == AugmentedKind::Differential {
            out.extend_from_slice(y);
        }
        for &e in eta {
            out.extend(y.iter().map(|&v| e * v));
        }
        out
    }
}

/// The pair `(P̃, Σ̃)` for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSpace<T> {
    pub p_tilde: Matrix<T>,
    pub sigma_tilde: CovarianceMatrix<T>,
    pub layout: AugmentedLayout,
}

impl<T: Real> AugmentedSpace<T> {
    pub fn standard(p: &ProjectionMatrix<T>, sigma: &CovarianceMatrix<T>, act: &Activation) -> Result<Self> {
        Ok(AugmentedSpace {
            p_tilde: build_augmented_projection(p),
            sigma_tilde: build_augmented_covariance(sigma, act, p.n_out())?,
            layout: AugmentedLayout::standard(p.n_in(), p.n_out()),
        })
    }

    pub fn differential(
        p: &ProjectionMatrix<T>,
        eps: T,
        sigma: &CovarianceMatrix<T>,
        act: &Activation,
    ) -> Result<Self> {
        Ok(AugmentedSpace {
            p_tilde: build_differential_projection(p, eps)?,
            sigma_tilde: build_differential_covariance(sigma, act)?,
            layout: AugmentedLayout::differential(p.n_in()),
        })
    }
}

/// `P̃ ∈ ℝ^{nm×m}`: column `j` carries `p_j` in block row `j`.
pub fn build_augmented_projection<T: Real>(p: &ProjectionMatrix<T>) -> Matrix<T> {
    let (n, m) = (p.n_in(), p.n_out());
    let mut out = Matrix::zeros(n * m, m);
    for j in 0..m {
        for i in 0..n {
            out[(j * n + i, j)] = p.matrix()[(i, j)];
        }
    }
    out
}

/// Differential-layer `P̃ ∈ ℝ^{n(n+1)×n}`: identity on top, `√ε·blockdiag(p_1…p_n)` below.
/// Columns have squared norm `1 + ε`.
pub fn build_differential_projection<T: Real>(p: &ProjectionMatrix<T>, eps: T) -> Result<Matrix<T>> {
    if p.n_in() != p.n_out() {
        return Err(CapacityError::InvalidInput(format!(
            "differential layer needs a square projection, got {}x{}",
            p.n_in(),
            p.n_out()
        )));
    }
    if !(eps > T::zero() && eps.is_finite()) {
        return Err(CapacityError::InvalidInput(format!("eps must be > 0, got {eps}")));
    }
    let n = p.n_in();
    let root = eps.sqrt();
    let mut out = Matrix::zeros(n * (n + 1), n);
    for j in 0..n {
        out[(j, j)] = T::one();
        for i in 0..n {
            out[(n + j * n + i, j)] = root * p.matrix()[(i, j)];
        }
    }
    Ok(out)
}

/// Closed-form `Σ̃` for `m` output blocks: diagonal blocks `Σ` (`σ²Σ` for
/// pseudo-random), off-diagonal blocks `ν Σ`.
pub fn build_augmented_covariance<T: Real>(
    sigma: &CovarianceMatrix<T>,
    act: &Activation,
    m: usize,
) -> Result<CovarianceMatrix<T>> {
    act.validate()?;
    let nu = T::lit(decoupling_nu(act)?);
    let diag = match act {
        Activation::PseudoRandom { sigma } => T::lit(sigma * sigma),
        _ => T::one(),
    };
    let n = sigma.dim();
    let s = sigma.entries();
    let out = Matrix::from_fn(n * m, n * m, |r, c| {
        let w = if r / n == c / n { diag } else { nu };
        w * s[(r % n, c % n)]
    });
    Ok(CovarianceMatrix::from_trusted(out))
}

/// `Σ̃` of the differential layout: plain block `Σ`, `η` blocks as in
/// [`build_augmented_covariance`], plain-to-`η` coupling `E[η]·Σ`.
pub fn build_differential_covariance<T: Real>(
    sigma: &CovarianceMatrix<T>,
    act: &Activation,
) -> Result<CovarianceMatrix<T>> {
    let n = sigma.dim();
    let inner = build_augmented_covariance(sigma, act, n)?;
    let mu = T::lit(mean_eta(act)?);
    let s = sigma.entries();
    let out = Matrix::from_fn(n * (n + 1), n * (n + 1), |r, c| match (r < n, c < n) {
        (true, true) => s[(r, c)],
        (true, false) | (false, true) => mu * s[(r % n, c % n)],
        (false, false) => inner.entries()[(r - n, c - n)],
    });
    Ok(CovarianceMatrix::from_trusted(out))
}

/// Linear activation: `K̃ = (1/√m)[K; …; K]`.
pub fn linear_stacked_basis<T: Real>(k: &CapacityBasis<T>, m: usize) -> Result<CapacityBasis<T>> {
    if m == 0 {
        return Err(CapacityError::InvalidInput("m must be positive".into()));
    }
    let n = k.ambient_dim();
    let scale = T::one() / T::from_count(m).sqrt();
    let cols = k.columns();
    let out = Matrix::from_fn(n * m, k.rank(), |r, c| cols[(r % n, c)] * scale);
    Ok(CapacityBasis::from_trusted(out))
}

/// Block selector `S̃ = blockdiag(S, …, S)` lifting an input-space subspace to
/// the standard augmented space.
pub fn lift_selector<T: Real>(
    s: &crate::capacity::SubspaceSelector<T>,
    m: usize,
) -> crate::capacity::SubspaceSelector<T> {
    let blocks: Vec<&Matrix<T>> = std::iter::repeat_n(s.basis(), m).collect();
    crate::capacity::SubspaceSelector::new(Matrix::block_diagonal(&blocks))
        .expect("block diagonal of orthonormal blocks is orthonormal")
}

/// Augmented capacity basis `K̃`.
///
/// With white inputs (`Σ̃ = σ² I`) and orthonormal `P̃ K^φ` this is `P̃ K^φ`
/// itself; otherwise the column space of `Σ̃ P̃ K^φ` is orthonormalised.
pub fn augmented_capacity_basis<T: Real>(
    sigma_tilde: &CovarianceMatrix<T>,
    p_tilde: &Matrix<T>,
    k_phi: &CapacityBasis<T>,
    white_input: bool,
) -> Result<CapacityBasis<T>> {
    if sigma_tilde.dim() != p_tilde.nrows() {
        return Err(CapacityError::mismatch(
            "augmented_capacity_basis: sigma_tilde vs p_tilde rows",
            p_tilde.nrows(),
            sigma_tilde.dim(),
        ));
    }
    if p_tilde.ncols() != k_phi.ambient_dim() {
        return Err(CapacityError::mismatch(
            "augmented_capacity_basis: p_tilde columns vs k_phi dimension",
            p_tilde.ncols(),
            k_phi.ambient_dim(),
        ));
    }
    let pk = p_tilde.matmul(k_phi.columns())?;
    if white_input
        && sigma_tilde.as_scaled_identity(T::tol(1e-12)).is_some()
        && orthonormality_defect(&pk) <= T::tol(1e-10)
    {
        return Ok(CapacityBasis::from_trusted(pk));
    }
    let weighted = sigma_tilde.entries().matmul(&pk)?;
    orthonormal_basis(&weighted, T::lit(DEFAULT_RANK_TOL))
}

/// Input-space capacities from an augmented basis: `κ_i` sums the capacity of
/// every augmented coordinate built from input `i`.
pub fn augmented_spatial_profile<T: Real>(
    k_tilde: &CapacityBasis<T>,
    layout: &AugmentedLayout,
) -> Result<SpatialCapacity<T>> {
    if k_tilde.ambient_dim() != layout.dim() {
        return Err(CapacityError::mismatch(
            "augmented_spatial_profile",
            layout.dim(),
            k_tilde.ambient_dim(),
        ));
    }
    let mut values = vec![T::zero(); layout.n_in];
    for a in 0..layout.dim() {
        let (_, i) = layout.locate(a);
        values[i] += k_tilde.columns().row(a).iter().map(|&x| x * x).sum::<T>();
    }
    Ok(SpatialCapacity::from_trusted(values))
}
