//! Monte Carlo ground truth for the closed forms.
//!
//! Inputs `Y` are sampled, pushed through a literal layer `φ_j = f(p_jᵀ Y)`,
//! and the augmented vectors `Ỹ` are accumulated. Sampling is split into
//! [`DEFAULT_SHARDS`] shards with seeds derived from the experiment seed and
//! reduced in shard order, so every report depends only on its inputs.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{
    augmented_spatial_profile, build_augmented_projection, Activation, AugmentedLayout,
    DEFAULT_SHARDS,
};
use crate::capacity::{
    gram_capacity_basis, orthonormal_basis, spatial_profile, CovarianceMatrix, ParamMap,
    ProjectionMatrix, SpatialCapacity, DEFAULT_RANK_TOL,
};
use crate::error::{CapacityError, Result};
use crate::linalg::{cholesky_factor, cholesky_solve, solve_lower};
use crate::matrix::Matrix;
use crate::propagate::{propagate_single, propagation_matrix};
use crate::scalar::Real;
use crate::seeding::{derive_seed, gaussian_matrix, mix64};

pub const MIN_SAMPLES: usize = 1000;

const ETA_STREAM: u64 = u64::MAX;
const SIGMA_STREAM: u64 = 0x5349_474D;
const FIT_STREAM: u64 = 0x0046_4954;
const EVAL_STREAM: u64 = 0x4556_414C;
const PROJECTION_STREAM: u64 = 0x50;
const SELECTOR_STREAM: u64 = 0x53;
const TARGET_STREAM: u64 = 0x54;

fn canonical_bits(z: f64) -> u64 {
    if z == 0.0 {
        0
    } else {
        z.to_bits()
    }
}

/// Frozen `±σ` sign process: `η(z)` is a hash of the bits of `z` and the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoRandomSign {
    pub seed: u64,
    pub sigma: f64,
}

impl PseudoRandomSign {
    pub fn new(seed: u64, sigma: f64) -> Self {
        PseudoRandomSign { seed, sigma }
    }

    /// `η(z) ∈ {−σ, σ}`; NaN maps to NaN.
    #[inline]
    pub fn eta(&self, z: f64) -> f64 {
        if z.is_nan() {
            return f64::NAN;
        }
        let h = mix64(canonical_bits(z) ^ mix64(self.seed ^ 0xA076_1D64_78BD_642F));
        if h >> 63 == 0 {
            self.sigma
        } else {
            -self.sigma
        }
    }

    /// `f(z) = η(z)·z`.
    pub fn apply(&self, z: f64) -> f64 {
        self.eta(z) * z
    }
}

/// Checked form of [`PseudoRandomSign::eta`].
pub fn pseudo_random_eta(z: f64, prs: &PseudoRandomSign) -> Result<f64> {
    if z.is_nan() {
        return Err(CapacityError::NonFinite("pseudo-random activation input".into()));
    }
    Ok(prs.eta(z))
}

/// Distribution of the layer inputs `Y`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSampler {
    #[default]
    StandardNormal,
    Isotropic { sigma: f64 },
    /// `Y = L ξ` with `ξ` standard normal; covariance `L Lᵀ`.
    Correlated { factor: Matrix<f64> },
}

impl InputSampler {
    /// True when `Σ = σ² I`.
    pub fn is_white(&self) -> bool {
        !matches!(self, InputSampler::Correlated { .. })
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            InputSampler::StandardNormal => Ok(()),
            InputSampler::Isotropic { sigma } if *sigma > 0.0 && sigma.is_finite() => Ok(()),
            InputSampler::Isotropic { sigma } => Err(CapacityError::InvalidInput(format!(
                "sampler sigma {sigma} must be > 0"
            ))),
            InputSampler::Correlated { factor } => {
                if factor.shape() != (n, n) {
                    Err(CapacityError::mismatch(
                        "correlated sampler factor",
                        format!("{n}x{n}"),
                        format!("{}x{}", factor.nrows(), factor.ncols()),
                    ))
                } else if !factor.is_finite() {
                    Err(CapacityError::NonFinite("sampler factor".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, scratch: &mut [f64], y: &mut [f64]) {
        match self {
            InputSampler::StandardNormal => {
                for v in y.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
            }
            InputSampler::Isotropic { sigma } => {
                for v in y.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = sigma * z;
                }
            }
            InputSampler::Correlated { factor } => {
                for v in scratch.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                for (i, v) in y.iter_mut().enumerate() {
                    *v = factor.row(i).iter().zip(scratch.iter()).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
}

/// One sampled input together with its layer quantities.
pub struct Sample<'a> {
    pub y: &'a [f64],
    /// `η_j = η((PᵀY)_j)`.
    pub eta: &'a [f64],
    /// Features `φ_j = η_j (PᵀY)_j`.
    pub phi: &'a [f64],
    /// Augmented input `Ỹ`, block `j` holding `η_j Y`.
    pub y_tilde: &'a [f64],
}

struct Sampler<'a> {
    p: Matrix<f64>,
    activation: &'a Activation,
    eta_seed: u64,
    input: &'a InputSampler,
    layout: AugmentedLayout,
}

struct Buffers {
    scratch: Vec<f64>,
    y: Vec<f64>,
    eta: Vec<f64>,
    phi: Vec<f64>,
    y_tilde: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn new<T: Real>(
        p: &ProjectionMatrix<T>,
        activation: &'a Activation,
        input: &'a InputSampler,
        seed: u64,
    ) -> Result<Self> {
        activation.validate()?;
        input.validate(p.n_in())?;
        Ok(Sampler {
            p: p.matrix().to_f64(),
            activation,
            eta_seed: derive_seed(seed, ETA_STREAM),
            input,
            layout: AugmentedLayout::standard(p.n_in(), p.n_out()),
        })
    }

    fn buffers(&self) -> Buffers {
        let (n, m) = (self.p.nrows(), self.p.ncols());
        Buffers {
            scratch: vec![0.0; n],
            y: vec![0.0; n],
            eta: vec![0.0; m],
            phi: vec![0.0; m],
            y_tilde: vec![0.0; n * m],
        }
    }

    fn draw<'b>(&self, rng: &mut ChaCha8Rng, buf: &'b mut Buffers) -> Sample<'b> {
        let (n, m) = (self.p.nrows(), self.p.ncols());
        self.input.draw(rng, &mut buf.scratch, &mut buf.y);
        for j in 0..m {
            let z: f64 = (0..n).map(|i| self.p[(i, j)] * buf.y[i]).sum();
            let e = self.activation.eta(z, self.eta_seed);
            buf.eta[j] = e;
            buf.phi[j] = e * z;
            for i in 0..n {
                buf.y_tilde[j * n + i] = e * buf.y[i];
            }
        }
        Sample {
            y: &buf.y,
            eta: &buf.eta,
            phi: &buf.phi,
            y_tilde: &buf.y_tilde,
        }
    }

    /// Runs `step` over `n_samples` draws split into shards; results are in shard order.
    fn run<A, I, F>(&self, n_samples: usize, stream_seed: u64, init: I, step: F) -> Vec<A>
    where
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, &Sample<'_>) + Sync,
    {
        (0..DEFAULT_SHARDS)
            .into_par_iter()
            .map(|shard| {
                let count =
                    n_samples / DEFAULT_SHARDS + usize::from(shard < n_samples % DEFAULT_SHARDS);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(stream_seed, shard as u64));
                let mut buf = self.buffers();
                let mut acc = init();
                for _ in 0..count {
                    let s = self.draw(&mut rng, &mut buf);
                    step(&mut acc, &s);
                }
                acc
            })
            .collect()
    }
}

/// Accumulates `ỸỸᵀ` (upper triangle) over one shard.
fn accumulate_outer(acc: &mut [f64], v: &[f64]) {
    let d = v.len();
    for r in 0..d {
        let vr = v[r];
        if vr == 0.0 {
            continue;
        }
        let row = &mut acc[r * d..(r + 1) * d];
        for c in r..d {
            row[c] += vr * v[c];
        }
    }
}

/// Sample average of `Ỹ Ỹᵀ` for the standard augmented layout.
pub fn empirical_sigma_tilde<T: Real>(
    p: &ProjectionMatrix<T>,
    act: &Activation,
    sampler: &InputSampler,
    n_samples: usize,
    seed: u64,
) -> Result<CovarianceMatrix<T>> {
    let s = Sampler::new(p, act, sampler, seed)?;
    Ok(CovarianceMatrix::from_trusted(Matrix::from_f64(&sigma_tilde_f64(
        &s, n_samples, seed,
    )?)))
}

fn sigma_tilde_f64(s: &Sampler<'_>, n_samples: usize, seed: u64) -> Result<Matrix<f64>> {
    if n_samples < MIN_SAMPLES {
        return Err(CapacityError::InvalidInput(format!(
            "need at least {MIN_SAMPLES} samples, got {n_samples}"
        )));
    }
    let d = s.layout.dim();
    let shards = s.run(
        n_samples,
        derive_seed(seed, SIGMA_STREAM),
        || vec![0.0; d * d],
        |acc, sample| accumulate_outer(acc, sample.y_tilde),
    );
    let mut total = vec![0.0; d * d];
    for shard in &shards {
        for (t, v) in total.iter_mut().zip(shard) {
            *t += v;
        }
    }
    let n = n_samples as f64;
    Ok(Matrix::from_fn(d, d, |r, c| {
        let (a, b) = if r <= c { (r, c) } else { (c, r) };
        total[a * d + b] / n
    }))
}

/// Regression targets for the last layer.
pub trait Target: Sync {
    fn value(&self, sample: &Sample<'_>) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> Target for F {
    fn value(&self, sample: &Sample<'_>) -> f64 {
        self(sample.y)
    }
}

/// `t(Y) = cᵀ Ỹ + τ·ξ(Y)`, where `ξ(Y) = ±1` is a frozen hash of `Y`
/// independent of every feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedTarget {
    pub coeffs: Vec<f64>,
    pub noise: f64,
    pub noise_seed: u64,
}

impl AugmentedTarget {
    /// `t = A₀ᵀ φ(Y)`, i.e. `c = P̃ A₀`.
    pub fn realizable<T: Real>(config: &ExperimentConfig<T>, a0: &[f64]) -> Result<Self> {
        if a0.len() != config.m() {
            return Err(CapacityError::mismatch("realizable target", config.m(), a0.len()));
        }
        let p_tilde = build_augmented_projection(&config.projection).to_f64();
        Ok(AugmentedTarget {
            coeffs: p_tilde.matvec(a0)?,
            noise: 0.0,
            noise_seed: 0,
        })
    }

    /// Gaussian coefficients `c` plus `±noise`.
    pub fn random<T: Real>(config: &ExperimentConfig<T>, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AugmentedTarget {
            coeffs: (0..config.n() * config.m())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect(),
            noise,
            noise_seed: derive_seed(seed, 1),
        }
    }

    pub fn with_noise(mut self, noise: f64, seed: u64) -> Self {
        self.noise = noise;
        self.noise_seed = seed;
        self
    }

    fn noise_sign(&self, y: &[f64]) -> f64 {
        let h = y
            .iter()
            .fold(mix64(self.noise_seed), |h, &v| mix64(h ^ canonical_bits(v)));
        if h >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl Target for AugmentedTarget {
    fn value(&self, sample: &Sample<'_>) -> f64 {
        let linear: f64 = self.coeffs.iter().zip(sample.y_tilde).map(|(a, b)| a * b).sum();
        if self.noise == 0.0 {
            linear
        } else {
            linear + self.noise * self.noise_sign(sample.y)
        }
    }
}

/// A single readout layer `A` on top of a fixed random layer `φ = f(PᵀY)`.
/// Only the coordinates in `param_selector` are trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig<T> {
    pub projection: ProjectionMatrix<T>,
    pub activation: Activation,
    pub param_selector: Vec<usize>,
    pub n_samples: usize,
    pub seed: u64,
    pub sampler: InputSampler,
}

impl<T: Real> ExperimentConfig<T> {
    pub fn new(
        projection: ProjectionMatrix<T>,
        activation: Activation,
        param_selector: Vec<usize>,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let config = ExperimentConfig {
            projection,
            activation,
            param_selector,
            n_samples,
            seed,
            sampler: InputSampler::StandardNormal,
        };
        config.validate()?;
        Ok(config)
    }

    /// Gaussian `P` (columns normalised) and a uniformly drawn selector of
    /// `selector_size` features, both derived from `seed`; pseudo-random activation.
    pub fn random(
        n: usize,
        m: usize,
        selector_size: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || m == 0 || selector_size == 0 || selector_size > m {
            return Err(CapacityError::InvalidInput(format!(
                "random experiment needs n, m >= 1 and 1 <= selector <= m, got n={n} m={m} selector={selector_size}"
            )));
        }
        let raw = gaussian_matrix(n, m, derive_seed(seed, PROJECTION_STREAM));
        let projection = ProjectionMatrix::normalized(raw)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SELECTOR_STREAM));
        let mut selector = sample_indices(&mut rng, m, selector_size).into_vec();
        selector.sort_unstable();
        Self::new(projection, Activation::pseudo_random(), selector, n_samples, seed)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_sampler(mut self, sampler: InputSampler) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn with_samples(mut self, n_samples: usize) -> Self {
        self.n_samples = n_samples;
        self
    }

    pub fn n(&self) -> usize {
        self.projection.n_in()
    }

    pub fn m(&self) -> usize {
        self.projection.n_out()
    }

    pub fn validate(&self) -> Result<()> {
        if self.param_selector.is_empty() {
            return Err(CapacityError::InvalidInput("parameter selector is empty".into()));
        }
        let mut seen = vec![false; self.m()];
        for &j in &self.param_selector {
            if j >= self.m() {
                return Err(CapacityError::InvalidInput(format!(
                    "selector index {j} out of range for m={}",
                    self.m()
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(CapacityError::InvalidInput(format!("selector index {j} repeated")));
            }
        }
        if self.n_samples < MIN_SAMPLES {
            return Err(CapacityError::InvalidInput(format!(
                "need at least {MIN_SAMPLES} samples, got {}",
                self.n_samples
            )));
        }
        self.activation.validate()?;
        self.sampler.validate(self.n())
    }

    fn sampler(&self) -> Result<Sampler<'_>> {
        self.validate()?;
        Sampler::new(&self.projection, &self.activation, &self.sampler, self.seed)
    }
}

/// Additive sufficient statistics of one shard.
#[derive(Clone)]
struct RegressionStats {
    /// `Σ φ φᵀ` (m×m, row-major).
    gram: Vec<f64>,
    /// `Σ φ t`.
    cross: Vec<f64>,
    /// `Σ t²`.
    tt: f64,
    /// `Σ Ỹ φ_Sᵀ` (nm×p), only for evaluation streams.
    aug_cross: Vec<f64>,
    count: usize,
}

impl RegressionStats {
    fn zeros(m: usize, aug: usize) -> Self {
        RegressionStats {
            gram: vec![0.0; m * m],
            cross: vec![0.0; m],
            tt: 0.0,
            aug_cross: vec![0.0; aug],
            count: 0,
        }
    }

    fn add(&mut self, other: &RegressionStats) {
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            *a += b;
        }
        for (a, b) in self.aug_cross.iter_mut().zip(&other.aug_cross) {
            *a += b;
        }
        self.tt += other.tt;
        self.count += other.count;
    }

    fn sum(shards: &[RegressionStats], skip: Option<usize>) -> RegressionStats {
        let mut total = RegressionStats::zeros(shards[0].cross.len(), shards[0].aug_cross.len());
        for (k, s) in shards.iter().enumerate() {
            if Some(k) != skip {
                total.add(s);
            }
        }
        total
    }

    /// Mean squared error of readout `a`.
    fn loss(&self, a: &[f64]) -> f64 {
        let m = a.len();
        let mut quad = 0.0;
        for r in 0..m {
            for c in 0..m {
                quad += a[r] * self.gram[r * m + c] * a[c];
            }
        }
        let lin: f64 = a.iter().zip(&self.cross).map(|(x, y)| x * y).sum();
        (self.tt - 2.0 * lin + quad) / self.count as f64
    }
}

fn collect_stats<T: Real>(
    config: &ExperimentConfig<T>,
    target: &dyn Target,
    stream: u64,
    with_aug: bool,
) -> Result<Vec<RegressionStats>> {
    let s = config.sampler()?;
    let m = config.m();
    let sel = &config.param_selector;
    let aug = if with_aug { s.layout.dim() * sel.len() } else { 0 };
    let shards = s.run(
        config.n_samples,
        derive_seed(config.seed, stream),
        || RegressionStats::zeros(m, aug),
        |acc, sample| {
            let t = target.value(sample);
            let phi = sample.phi;
            for r in 0..m {
                acc.cross[r] += phi[r] * t;
                for c in 0..m {
                    acc.gram[r * m + c] += phi[r] * phi[c];
                }
            }
            acc.tt += t * t;
            if with_aug {
                let p = sel.len();
                for (a, &v) in sample.y_tilde.iter().enumerate() {
                    for (k, &j) in sel.iter().enumerate() {
                        acc.aug_cross[a * p + k] += v * phi[j];
                    }
                }
            }
            acc.count += 1;
        },
    );
    let values_finite = shards
        .iter()
        .all(|s| s.tt.is_finite() && s.gram.iter().all(|v| v.is_finite()));
    if !values_finite {
        return Err(CapacityError::NonFinite("sampled features or target".into()));
    }
    Ok(shards)
}

fn solve_selected(stats: &RegressionStats, selector: &[usize], m: usize) -> Result<Vec<f64>> {
    let p = selector.len();
    let g = Matrix::from_fn(p, p, |r, c| stats.gram[selector[r] * m + selector[c]]);
    let b: Vec<f64> = selector.iter().map(|&j| stats.cross[j]).collect();
    let x = cholesky_solve(&g, &b).map_err(|e| match e {
        CapacityError::RankDeficient { columns } => CapacityError::RankDeficient {
            columns: columns.into_iter().map(|k| selector[k]).collect(),
        },
        other => other,
    })?;
    let mut a = vec![0.0; m];
    for (k, &j) in selector.iter().enumerate() {
        a[j] = x[k];
    }
    Ok(a)
}

/// Least-squares readout `A*` over the selected features (zero elsewhere).
pub fn fit_optimal_last_layer<T: Real>(
    config: &ExperimentConfig<T>,
    target: &dyn Target,
) -> Result<Vec<f64>> {
    let shards = collect_stats(config, target, FIT_STREAM, false)?;
    solve_selected(&RegressionStats::sum(&shards, None), &config.param_selector, config.m())
}

/// Mean squared error of readout `a` on the fitting sample.
pub fn empirical_loss<T: Real>(
    config: &ExperimentConfig<T>,
    a: &[f64],
    target: &dyn Target,
) -> Result<f64> {
    if a.len() != config.m() {
        return Err(CapacityError::mismatch("empirical_loss readout", config.m(), a.len()));
    }
    let shards = collect_stats(config, target, FIT_STREAM, false)?;
    Ok(RegressionStats::sum(&shards, None).loss(a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    /// `‖K̃ᵀ X̃‖` on an independent evaluation sample.
    pub residual: f64,
    /// Delete-one-shard jackknife standard error of the same statistic,
    /// refitting `A*` for every replicate.
    pub noise_floor: f64,
    pub n_fit: usize,
    pub n_eval: usize,
}

/// Whitened stationarity statistic `L⁻¹ Mᵀ X̃`, where `M = E[Ỹ φ_Sᵀ] = Σ̃ P̃ K^φ`,
/// `L Lᵀ = MᵀM` and `MᵀX̃ = E[φ_S e]` with `e = t − aᵀφ`. Its norm equals
/// `‖K̃ᵀX̃‖` for `K̃ = orth(M)`.
fn whitened_gradient(
    eval: &RegressionStats,
    a: &[f64],
    selector: &[usize],
    m: usize,
    whitener: &Matrix<f64>,
) -> Vec<f64> {
    let n = eval.count as f64;
    let grad: Vec<f64> = selector
        .iter()
        .map(|&j| {
            let model: f64 = (0..m).map(|c| eval.gram[j * m + c] * a[c]).sum();
            (eval.cross[j] - model) / n
        })
        .collect();
    solve_lower(whitener, &grad)
}

fn whitener(eval: &RegressionStats, p: usize) -> Result<Matrix<f64>> {
    let n = eval.count as f64;
    let rows = eval.aug_cross.len() / p;
    let mt_m = Matrix::from_fn(p, p, |r, c| {
        (0..rows)
            .map(|a| eval.aug_cross[a * p + r] * eval.aug_cross[a * p + c])
            .sum::<f64>()
            / (n * n)
    });
    cholesky_factor(&mt_m)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks the optimality condition `K̃ᵀX̃ = 0` for a fitted readout.
///
/// The statistic is evaluated on a fresh sample drawn with the same `η`
/// realisation; in-sample it is zero by construction.
pub fn verify_stationarity<T: Real>(
    config: &ExperimentConfig<T>,
    a_star: &[f64],
    target: &dyn Target,
) -> Result<StationarityReport> {
    if a_star.len() != config.m() {
        return Err(CapacityError::mismatch("verify_stationarity readout", config.m(), a_star.len()));
    }
    let m = config.m();
    let sel = &config.param_selector;
    let fit = collect_stats(config, target, FIT_STREAM, false)?;
    let eval = collect_stats(config, target, EVAL_STREAM, true)?;
    let eval_all = RegressionStats::sum(&eval, None);
    let l = whitener(&eval_all, sel.len())?;
    let residual = norm(&whitened_gradient(&eval_all, a_star, sel, m, &l));

    let replicates: Vec<Vec<f64>> = (0..DEFAULT_SHARDS)
        .map(|k| {
            let a = solve_selected(&RegressionStats::sum(&fit, Some(k)), sel, m)?;
            Ok(whitened_gradient(&RegressionStats::sum(&eval, Some(k)), &a, sel, m, &l))
        })
        .collect::<Result<_>>()?;
    let g = DEFAULT_SHARDS as f64;
    let mean: Vec<f64> = (0..sel.len())
        .map(|c| replicates.iter().map(|r| r[c]).sum::<f64>() / g)
        .collect();
    let spread: f64 = replicates
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .sum();
    Ok(StationarityReport {
        residual,
        noise_floor: ((g - 1.0) / g * spread).sqrt(),
        n_fit: fit.iter().map(|s| s.count).sum(),
        n_eval: eval_all.count,
    })
}

/// Fits `A*` and checks its stationarity in one call.
pub fn fit_and_verify<T: Real>(
    config: &ExperimentConfig<T>,
    target: &dyn Target,
) -> Result<(Vec<f64>, StationarityReport)> {
    let a = fit_optimal_last_layer(config, target)?;
    let report = verify_stationarity(config, &a, target)?;
    Ok((a, report))
}

/// Measured against closed-form input-space capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport<T> {
    pub kappa_hat: SpatialCapacity<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_theory: Option<SpatialCapacity<T>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_dev: Option<f64>,
    pub total_hat: f64,
    pub stationarity_residual: f64,
    pub stationarity_noise_floor: f64,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

/// `κ̂_i` from the sampled `Σ̂̃`: `K̃ = orth(Σ̂̃ P̃ K^φ)` aggregated over blocks.
/// The closed form `κ = (P∘P) κ^φ` is attached for pseudo-random layers with
/// white inputs.
pub fn empirical_spatial_capacity<T: Real>(
    config: &ExperimentConfig<T>,
) -> Result<EmpiricalReport<T>> {
    let s = config.sampler()?;
    let sigma_tilde = sigma_tilde_f64(&s, config.n_samples, config.seed)?;
    let k_tilde = empirical_augmented_basis(config, &sigma_tilde)?;
    let kappa_hat_f64 = augmented_spatial_profile(&k_tilde, &s.layout)?;

    let closed_form = config.activation.is_pseudo_random() && config.sampler.is_white();
    let kappa_theory = if closed_form {
        let k_phi = selector_basis::<T>(config)?;
        let d = propagation_matrix(config.projection.matrix())?;
        Some(propagate_single(&d, &spatial_profile(&k_phi))?)
    } else {
        None
    };
    let kappa_hat = SpatialCapacity::from_trusted(
        kappa_hat_f64.values().iter().map(|&v| T::lit(v)).collect(),
    );
    let max_abs_dev = kappa_theory
        .as_ref()
        .map(|t| kappa_hat.max_abs_diff(t).as_f64());
    let caveat = match (config.activation.is_pseudo_random(), config.sampler.is_white()) {
        (true, true) => None,
        (_, false) => Some(
            "non-iid input sampler: closed-form comparison refused; kappa_hat uses the general orthonormalised basis"
                .to_string(),
        ),
        (false, true) => Some(format!(
            "{} activation: kappa_hat is the general orthonormalised result; no closed form applies",
            config.activation
        )),
    };

    let target = AugmentedTarget::random(config, 0.5, derive_seed(config.seed, TARGET_STREAM));
    let (_, stationarity) = fit_and_verify(config, &target)?;

    Ok(EmpiricalReport {
        total_hat: kappa_hat_f64.total(),
        kappa_hat,
        kappa_theory,
        max_abs_dev,
        stationarity_residual: stationarity.residual,
        stationarity_noise_floor: stationarity.noise_floor,
        n_samples: config.n_samples,
        seed: config.seed,
        caveat,
    })
}

fn selector_basis<T: Real>(
    config: &ExperimentConfig<T>,
) -> Result<crate::capacity::CapacityBasis<T>> {
    let params = ParamMap::selector(config.m(), &config.param_selector)?;
    gram_capacity_basis(&params, T::lit(DEFAULT_RANK_TOL))
}

/// `orth(Σ̂̃ P̃ K^φ)` for a sampled `Σ̂̃`.
pub fn empirical_augmented_basis<T: Real>(
    config: &ExperimentConfig<T>,
    sigma_tilde: &Matrix<f64>,
) -> Result<crate::capacity::CapacityBasis<f64>> {
    let k_phi = selector_basis::<f64>(&ExperimentConfig {
        projection: ProjectionMatrix::new(config.projection.matrix().to_f64())?,
        activation: config.activation.clone(),
        param_selector: config.param_selector.clone(),
        n_samples: config.n_samples,
        seed: config.seed,
        sampler: config.sampler.clone(),
    })?;
    let p_tilde = build_augmented_projection(&ProjectionMatrix::new(
        config.projection.matrix().to_f64(),
    )?);
    let weighted = sigma_tilde.matmul(&p_tilde.matmul(k_phi.columns())?)?;
    orthonormal_basis(&weighted, DEFAULT_RANK_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::linear_stacked_basis;

    #[test]
    fn sign_is_deterministic_and_canonical() {
        let prs = PseudoRandomSign::new(42, 2.0);
        for z in [0.3, -1.7, 1e-300, 5.0] {
            assert_eq!(prs.eta(z), prs.eta(z));
            assert_eq!(prs.eta(z).abs(), 2.0);
        }
        assert_eq!(prs.eta(0.0), prs.eta(-0.0));
        assert!(pseudo_random_eta(f64::NAN, &prs).is_err());
        assert_eq!(pseudo_random_eta(1.5, &prs).unwrap(), prs.eta(1.5));
        assert_eq!(prs.apply(1.5), prs.eta(1.5) * 1.5);
    }

    #[test]
    fn sign_has_zero_mean() {
        let prs = PseudoRandomSign::new(7, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| prs.eta(StandardNormal.sample(&mut rng)))
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() <= 3.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn nearby_inputs_decorrelate() {
        let prs = PseudoRandomSign::new(11, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let corr = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                prs.eta(z) * prs.eta(z + 1e-12)
            })
            .sum::<f64>()
            / n as f64;
        assert!(corr.abs() <= 3.0 / (n as f64).sqrt(), "{corr}");
    }

    fn small_config(act: Activation) -> ExperimentConfig<f64> {
        ExperimentConfig::random(4, 3, 2, 20_000, 5)
            .unwrap()
            .with_activation(act)
    }

    #[test]
    fn linear_sigma_tilde_repeats_blocks() {
        let c = small_config(Activation::Linear);
        let st = empirical_sigma_tilde(&c.projection, &c.activation, &c.sampler, c.n_samples, 3)
            .unwrap();
        let e = st.entries();
        let n = c.n();
        for r in 0..e.nrows() {
            for col in 0..e.ncols() {
                assert_eq!(e[(r, col)], e[(r % n, col % n)]);
            }
        }
        let noise = (3.0 / c.n_samples as f64).sqrt();
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((e[(i, j)] - expect).abs() <= 5.0 * noise);
            }
        }
    }

    #[test]
    fn config_validation() {
        let c = small_config(Activation::pseudo_random());
        let mut bad = c.clone();
        bad.param_selector = vec![];
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.param_selector = vec![0, 0];
        assert!(bad.validate().is_err());
        assert!(c.clone().with_samples(10).validate().is_err());
        assert!(ExperimentConfig::<f64>::random(4, 3, 4, 2000, 1).is_err());
    }

    #[test]
    fn zero_target_fits_zero() {
        let c = small_config(Activation::pseudo_random());
        let a = fit_optimal_last_layer(&c, &|_: &[f64]| 0.0).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn realizable_target_is_recovered() {
        let c = small_config(Activation::pseudo_random());
        let mut a0 = vec![0.0; c.m()];
        for (k, &j) in c.param_selector.iter().enumerate() {
            a0[j] = 0.5 + k as f64;
        }
        let target = AugmentedTarget::realizable(&c, &a0).unwrap();
        let (a, report) = fit_and_verify(&c, &target).unwrap();
        for (x, y) in a.iter().zip(&a0) {
            assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
        }
        let scale = norm(&a);
        assert!(report.residual <= 1e-6 * scale, "{report:?}");
    }

    #[test]
    fn duplicate_features_are_rank_deficient() {
        let p = ProjectionMatrix::new(
            Matrix::from_columns(2, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        // Both inputs copy one normal draw, so the two linear features coincide.
        let factor = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let c = ExperimentConfig::new(p, Activation::Linear, vec![0, 1], 2000, 1)
            .unwrap()
            .with_sampler(InputSampler::Correlated { factor });
        match fit_optimal_last_layer(&c, &|y: &[f64]| y[0]) {
            Err(CapacityError::RankDeficient { columns }) => assert_eq!(columns, vec![1]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn linear_pipeline_matches_stacked_basis() {
        let c = small_config(Activation::Linear);
        let s = c.sampler().unwrap();
        let st = sigma_tilde_f64(&s, c.n_samples, c.seed).unwrap();
        let k_tilde = empirical_augmented_basis(&c, &st).unwrap();
        let n = c.n();
        let sigma_hat = Matrix::from_fn(n, n, |r, col| st[(r, col)]);
        let k_phi = selector_basis::<f64>(&c).unwrap();
        let k = orthonormal_basis(
            &sigma_hat.matmul(&c.projection.matrix().matmul(k_phi.columns()).unwrap()).unwrap(),
            DEFAULT_RANK_TOL,
        )
        .unwrap();
        let stacked = linear_stacked_basis(&k, c.m()).unwrap();
        let pa = k_tilde.projector();
        let pb = stacked.projector();
        assert!(pa.sub(&pb).unwrap().max_abs() <= 1e-10);
        let hat = augmented_spatial_profile(&k_tilde, &s.layout).unwrap();
        assert!(hat.max_abs_diff(&spatial_profile(&k)) <= 1e-10);
    }

    #[test]
    fn full_selector_capacity_totals_m() {
        let c = ExperimentConfig::<f64>::random(6, 4, 4, 20_000, 9).unwrap();
        let r = empirical_spatial_capacity(&c).unwrap();
        assert!((r.total_hat - 4.0).abs() <= 1e-9);
        assert!(r.max_abs_dev.unwrap() <= 5e-2);
        assert!(r.caveat.is_none());
    }

    #[test]
    fn caveats_for_non_closed_form_setups() {
        let c = small_config(Activation::Relu);
        let r = empirical_spatial_capacity(&c).unwrap();
        assert!(r.kappa_theory.is_none() && r.caveat.is_some());
        let factor = Matrix::from_fn(4, 4, |i, j| if i >= j { 1.0 } else { 0.0 });
        let c = small_config(Activation::pseudo_random())
            .with_sampler(InputSampler::Correlated { factor });
        let r = empirical_spatial_capacity(&c).unwrap();
        assert!(r.kappa_theory.is_none());
        assert!(r.caveat.unwrap().contains("non-iid"));
    }
}
