//! Deep residual limit: `D_l = I + εΔ` with a local, translation-invariant
//! generator `Δ`, its Markov evolution over `L` layers, and the drift-diffusion
//! closed form it approaches.
//!
//! Space is the neuron index (spacing 1); `v` and `Dcoef` are per unit of
//! depth-time, so `L` layers of step `ε` cover depth-time `T = ε·L`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capacity::SpatialCapacity;
use crate::error::{CapacityError, Result};
use crate::matrix::Matrix;
use crate::propagate::{propagate_single, ChainLayer, LayerChain, LayerFlavor, PropagationOperator};
use crate::scalar::Real;
use crate::seeding::derive_seed;
use crate::augment::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Periodic,
    /// Flux leaving the grid is kept at the edge cell.
    Reflecting,
}

/// Tridiagonal generator `Δ` with zero column sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualGenerator<T> {
    pub n: usize,
    pub drift: T,
    pub diffusion: T,
    pub boundary: Boundary,
    matrix: Matrix<T>,
}

impl<T: Real> ResidualGenerator<T> {
    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    /// Largest `ε` keeping `I + εΔ` entrywise positive on the diagonal.
    pub fn max_stable_eps(&self) -> T {
        let worst = (0..self.n).fold(T::zero(), |m, i| m.max(-self.matrix[(i, i)]));
        if worst == T::zero() {
            T::infinity()
        } else {
            T::one() / worst
        }
    }

    /// `I + εΔ`, rejected unless `ε` is below [`max_stable_eps`](Self::max_stable_eps).
    pub fn step_operator(&self, eps: T) -> Result<PropagationOperator<T>> {
        if !(eps > T::zero() && eps.is_finite()) {
            return Err(CapacityError::InvalidInput(format!("eps must be > 0, got {eps}")));
        }
        let max_eps = self.max_stable_eps();
        if eps >= max_eps {
            return Err(CapacityError::Rejected(format!(
                "eps = {eps} makes I + eps*Delta lose positivity; eps must be < {max_eps}"
            )));
        }
        let m = Matrix::identity(self.n).add(&self.matrix.scale(eps))?;
        PropagationOperator::new(m.map(|x| x.max(T::zero())))
    }
}

/// `Δ_{i,i−1} = D + v/2`, `Δ_ii = −2D`, `Δ_{i,i+1} = D − v/2` (per unit depth,
/// unit spacing). Requires `|v|/2 ≤ D`.
pub fn residual_generator<T: Real>(
    n: usize,
    drift: T,
    diffusion: T,
    boundary: Boundary,
) -> Result<ResidualGenerator<T>> {
    if n == 0 {
        return Err(CapacityError::InvalidInput("grid size must be positive".into()));
    }
    if !(drift.is_finite() && diffusion.is_finite()) || diffusion < T::zero() {
        return Err(CapacityError::InvalidInput(format!(
            "diffusion must be finite and >= 0, got {diffusion}"
        )));
    }
    let half = drift.abs() * T::lit(0.5);
    if half > diffusion {
        return Err(CapacityError::InvalidInput(format!(
            "|v|/2 = {half} exceeds D = {diffusion}: transition weights would be negative"
        )));
    }
    let right = diffusion + drift * T::lit(0.5);
    let left = diffusion - drift * T::lit(0.5);
    let mut matrix = Matrix::zeros(n, n);
    // Column j: mass at j moves to j+1 at rate `right`, to j−1 at rate `left`.
    for j in 0..n {
        matrix[(j, j)] -= right + left;
        let up = match (j + 1 < n, boundary) {
            (true, _) => j + 1,
            (false, Boundary::Periodic) => 0,
            (false, Boundary::Reflecting) => j,
        };
        let down = match (j > 0, boundary) {
            (true, _) => j - 1,
            (false, Boundary::Periodic) => n - 1,
            (false, Boundary::Reflecting) => j,
        };
        matrix[(up, j)] += right;
        matrix[(down, j)] += left;
    }
    Ok(ResidualGenerator {
        n,
        drift,
        diffusion,
        boundary,
        matrix,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepLimitConfig<T> {
    pub eps: T,
    pub layers: usize,
}

impl<T: Real> DeepLimitConfig<T> {
    pub fn new(eps: T, layers: usize) -> Self {
        DeepLimitConfig { eps, layers }
    }

    /// Total depth-time `T = ε·L`.
    pub fn depth_time(&self) -> T {
        self.eps * T::from_count(self.layers)
    }
}

/// Row-compressed copy of an operator; sums in ascending column order, so it
/// reproduces the dense product bit for bit.
struct SparseRows<T> {
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Real> SparseRows<T> {
    fn from_dense(m: &Matrix<T>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                m.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x != T::zero())
                    .map(|(j, &x)| (j, x))
                    .collect()
            })
            .collect();
        SparseRows { rows }
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }
}

/// `κ^{l−1} = (I + εΔ) κ^l` for `L` layers. Index `l` of the result is `κ^l`.
pub fn evolve_markov<T: Real>(
    gen: &ResidualGenerator<T>,
    cfg: &DeepLimitConfig<T>,
    kappa_top: &SpatialCapacity<T>,
) -> Result<Vec<SpatialCapacity<T>>> {
    if kappa_top.len() != gen.n {
        return Err(CapacityError::mismatch("evolve_markov top capacity", gen.n, kappa_top.len()));
    }
    let step = gen.step_operator(cfg.eps)?;
    let sparse = SparseRows::from_dense(step.matrix());
    let mut profiles = Vec::with_capacity(cfg.layers + 1);
    profiles.push(kappa_top.clone());
    for _ in 0..cfg.layers {
        let next = sparse.apply(profiles.last().expect("non-empty").values());
        profiles.push(SpatialCapacity::from_trusted(next));
    }
    profiles.reverse();
    Ok(profiles)
}

/// Same result as [`evolve_markov`]'s bottom profile, via dense [`propagate_single`] steps.
pub fn evolve_markov_dense<T: Real>(
    gen: &ResidualGenerator<T>,
    cfg: &DeepLimitConfig<T>,
    kappa_top: &SpatialCapacity<T>,
) -> Result<SpatialCapacity<T>> {
    let step = gen.step_operator(cfg.eps)?;
    let mut k = kappa_top.clone();
    for _ in 0..cfg.layers {
        k = propagate_single(&step, &k)?;
    }
    Ok(k)
}

/// A field `π(t, x_k)` on the grid `x_k = k·h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeField<T> {
    pub spacing: T,
    pub time: T,
    pub values: Vec<T>,
}

impl<T: Real> PdeField<T> {
    /// Unit-spacing field whose values are the capacities themselves.
    pub fn from_capacity(kappa: &SpatialCapacity<T>) -> Self {
        PdeField {
            spacing: T::one(),
            time: T::zero(),
            values: kappa.values().to_vec(),
        }
    }

    /// `Σ π·h`.
    pub fn mass(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.spacing
    }

    pub fn peak(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &x| m.max(x))
    }

    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }
}

/// Convolution of `initial` with the drift-diffusion heat kernel,
/// `π(t,x) = ∫ exp(−(x−y−vt)²/(4Dt)) / √(4πDt) · π(0,y) dy`, discretised by
/// the trapezoid rule on the grid. `t = 0` returns the input unchanged.
/// Sampling the kernel on the grid conserves mass up to a relative
/// `≈ 2·exp(−4π² D t / h²)`, so kernels narrower than a cell lose accuracy.
pub fn gaussian_solution<T: Real>(initial: &PdeField<T>, drift: T, diffusion: T, t: T) -> Result<PdeField<T>> {
    if t.is_nan() || t < T::zero() {
        return Err(CapacityError::InvalidInput(format!("time must be >= 0, got {t}")));
    }
    if t == T::zero() {
        return Ok(initial.clone());
    }
    if diffusion <= T::zero() {
        if drift == T::zero() {
            return Ok(PdeField {
                time: initial.time + t,
                ..initial.clone()
            });
        }
        return Err(CapacityError::Unsupported(
            "pure transport (D = 0, v != 0) has no kernel on the grid".into(),
        ));
    }
    let h = initial.spacing;
    let n = initial.values.len();
    let four_dt = T::lit(4.0) * diffusion * t;
    let norm = T::one() / (T::lit(std::f64::consts::PI) * four_dt).sqrt();
    let shift = drift * t;
    let weights: Vec<T> = (0..n)
        .map(|j| {
            let w = if j == 0 || j + 1 == n { T::lit(0.5) } else { T::one() };
            w * h * initial.values[j]
        })
        .collect();
    let values = (0..n)
        .map(|k| {
            let x = T::from_count(k) * h;
            weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != T::zero())
                .map(|(j, &w)| {
                    let d = x - T::from_count(j) * h - shift;
                    w * norm * (-(d * d) / four_dt).exp()
                })
                .sum()
        })
        .collect();
    Ok(PdeField {
        spacing: h,
        time: initial.time + t,
        values,
    })
}

/// Sup-norm discrepancy at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementLevel {
    pub spacing: f64,
    pub grid_points: usize,
    pub eps: f64,
    pub layers: usize,
    pub sup_error: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovPdeReport {
    pub depth_time: f64,
    pub markov_std: f64,
    pub gaussian_std: f64,
    pub peak: f64,
    pub sup_error: f64,
    pub relative_error: f64,
    /// Gaussian mass inside the grid is within 1e-6 of the initial mass.
    pub mass_within_grid: bool,
    /// Base resolution followed by refinements with `h/2`, `ε/4`, `4L` each.
    pub refinements: Vec<RefinementLevel>,
    /// `log(e_k/e_{k+1}) / log(ε_k/ε_{k+1})` between consecutive levels.
    pub observed_orders: Vec<f64>,
}

fn level_error<T: Real>(
    gen: &ResidualGenerator<T>,
    cfg: &DeepLimitConfig<T>,
    kappa_top: &SpatialCapacity<T>,
    spacing: T,
) -> Result<(SpatialCapacity<T>, PdeField<T>, PdeField<T>)> {
    let profiles = evolve_markov(gen, cfg, kappa_top)?;
    let bottom = profiles.into_iter().next().expect("non-empty");
    let t = cfg.depth_time();
    // Physical units: x = k·h, so per-cell rates scale back by h and h².
    let initial = PdeField {
        spacing,
        time: T::zero(),
        values: kappa_top.values().iter().map(|&m| m / spacing).collect(),
    };
    let gauss = gaussian_solution(&initial, gen.drift * spacing, gen.diffusion * spacing * spacing, t)?;
    let markov = PdeField {
        spacing,
        time: t,
        values: bottom.values().iter().map(|&m| m / spacing).collect(),
    };
    Ok((bottom, markov, gauss))
}

fn sup_diff<T: Real>(a: &PdeField<T>, b: &PdeField<T>) -> T {
    a.values
        .iter()
        .zip(&b.values)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

/// Compares the Markov bottom profile with the Gaussian closed form at the
/// same depth-time, at the base resolution and `refinements` parabolic
/// refinements (grid spacing halved, `ε` quartered, layers ×4 per level,
/// rates rescaled so the physical drift and diffusion are unchanged).
pub fn compare_markov_pde<T: Real>(
    gen: &ResidualGenerator<T>,
    cfg: &DeepLimitConfig<T>,
    kappa_top: &SpatialCapacity<T>,
    refinements: usize,
) -> Result<MarkovPdeReport> {
    let (bottom, markov, gauss) = level_error(gen, cfg, kappa_top, T::one())?;
    let peak = gauss.peak();
    let sup = sup_diff(&markov, &gauss);
    let rel = if peak > T::zero() { sup / peak } else { T::zero() };
    let mass_within_grid =
        (gauss.mass() - kappa_top.total()).abs() <= T::tol(1e-6) * kappa_top.total().max(T::one());
    let gaussian_std = (T::lit(2.0) * gen.diffusion * cfg.depth_time()).sqrt();

    let mut levels = vec![RefinementLevel {
        spacing: 1.0,
        grid_points: gen.n,
        eps: cfg.eps.as_f64(),
        layers: cfg.layers,
        sup_error: sup.as_f64(),
        relative_error: rel.as_f64(),
    }];
    for r in 1..=refinements {
        let factor = 1usize << r;
        let n = (gen.n - 1) * factor + 1;
        let f = T::from_count(factor);
        let fine = residual_generator(n, gen.drift * f, gen.diffusion * f * f, gen.boundary)?;
        let fine_cfg = DeepLimitConfig::new(cfg.eps / (f * f), cfg.layers * factor * factor);
        let mut top = vec![T::zero(); n];
        for (k, &m) in kappa_top.values().iter().enumerate() {
            top[k * factor] = m;
        }
        let top = SpatialCapacity::from_trusted(top);
        let spacing = T::one() / f;
        let (_, fm, fg) = level_error(&fine, &fine_cfg, &top, spacing)?;
        let fine_sup = sup_diff(&fm, &fg);
        let fine_peak = fg.peak();
        levels.push(RefinementLevel {
            spacing: spacing.as_f64(),
            grid_points: n,
            eps: fine_cfg.eps.as_f64(),
            layers: fine_cfg.layers,
            sup_error: fine_sup.as_f64(),
            relative_error: if fine_peak > T::zero() { (fine_sup / fine_peak).as_f64() } else { 0.0 },
        });
    }
    let observed_orders = levels
        .windows(2)
        .map(|w| (w[0].sup_error / w[1].sup_error).ln() / (w[0].eps / w[1].eps).ln())
        .collect();
    Ok(MarkovPdeReport {
        depth_time: cfg.depth_time().as_f64(),
        markov_std: bottom.spread().as_f64(),
        gaussian_std: gaussian_std.as_f64(),
        peak: peak.as_f64(),
        sup_error: sup.as_f64(),
        relative_error: rel.as_f64(),
        mass_within_grid,
        refinements: levels,
        observed_orders,
    })
}

/// `L` residual layers `I + εΔ_l` on a periodic grid, each with its own drift
/// `v_l ~ U[−D/2, D/2]` drawn from a per-layer seed stream.
pub fn random_layer_chain<T: Real>(
    n: usize,
    diffusion: T,
    eps: T,
    layers: usize,
    seed: u64,
) -> Result<LayerChain<T>> {
    let v_max = diffusion.as_f64() * 0.5;
    let mut out = Vec::with_capacity(layers);
    for l in 0..layers {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, l as u64));
        let v = if v_max > 0.0 { rng.random_range(-v_max..=v_max) } else { 0.0 };
        let gen = residual_generator(n, T::lit(v), diffusion, Boundary::Periodic)?;
        out.push(ChainLayer::new(
            gen.step_operator(eps)?,
            Activation::pseudo_random(),
            LayerFlavor::Residual,
        ));
    }
    Ok(LayerChain::new(out))
}

/// `L` copies of `I + εΔ` as a chain.
pub fn residual_chain<T: Real>(gen: &ResidualGenerator<T>, eps: T, layers: usize) -> Result<LayerChain<T>> {
    let op = gen.step_operator(eps)?;
    Ok(LayerChain::from_operators(vec![op; layers], LayerFlavor::Residual))
}
