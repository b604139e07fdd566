//! Effective receptive field and shattering measurements on capacity chains.

use serde::{Deserialize, Serialize};

use crate::capacity::SpatialCapacity;
use crate::deeplimit::{residual_chain, ResidualGenerator};
use crate::error::{CapacityError, Result};
use crate::propagate::{propagate_chain, LayerChain};
use crate::scalar::Real;

/// Path-enumeration limit.
pub const MAX_ENUMERATED_PATHS: f64 = 1e6;

/// Minimum width (in grid cells) of the points used for the log-log fit.
pub const MIN_FIT_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSpread {
    /// Layer index `l` of the profile `κ^l`.
    pub layer: usize,
    /// Layers traversed from the top, `L − l`.
    pub traversed: usize,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErfReport {
    pub probe_index: usize,
    pub per_depth: Vec<DepthSpread>,
    /// Least-squares slope of `log σ` against `log(L − l)`.
    pub fitted_exponent: Option<f64>,
    /// Root-mean-square residual of that fit.
    pub fit_residual: Option<f64>,
    /// Set when the probe sits within five final widths of the grid edge.
    pub boundary_flag: bool,
}

/// Least-squares line through `(x, y)`: returns `(slope, intercept, rms residual)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|&a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - intercept - slope * a).powi(2))
        .sum();
    Some((slope, intercept, (rss / nf).sqrt()))
}

/// Propagates a unit Dirac placed at `probe` on the top layer and records the
/// width of every intermediate profile.
pub fn erf_profile<T: Real>(chain: &LayerChain<T>, probe: usize) -> Result<ErfReport> {
    let top_dim = chain
        .layers
        .last()
        .map(|l| l.operator.n_out())
        .ok_or_else(|| CapacityError::InvalidInput("empty chain".into()))?;
    let top = SpatialCapacity::dirac(top_dim, probe, T::one())?;
    let profiles = propagate_chain(chain, &top)?;
    let depth = chain.len();
    let per_depth: Vec<DepthSpread> = (0..depth)
        .rev()
        .map(|l| DepthSpread {
            layer: l,
            traversed: depth - l,
            std: profiles[l].spread().as_f64(),
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = per_depth
        .iter()
        .filter(|d| d.std >= MIN_FIT_WIDTH)
        .map(|d| ((d.traversed as f64).ln(), d.std.ln()))
        .unzip();
    let fit = fit_line(&xs, &ys);
    let bottom = &profiles[0];
    let final_std = bottom.spread().as_f64();
    let n0 = bottom.len();
    let edge_distance = if top_dim == n0 {
        probe.min(n0 - 1 - probe) as f64
    } else {
        let centre = bottom.mean_position().as_f64();
        centre.min(n0 as f64 - 1.0 - centre)
    };
    let boundary_flag = probe == 0 || probe + 1 == top_dim || edge_distance < 5.0 * final_std;
    Ok(ErfReport {
        probe_index: probe,
        per_depth,
        fitted_exponent: fit.map(|f| f.0),
        fit_residual: fit.map(|f| f.2),
        boundary_flag,
    })
}

/// Final receptive-field widths of residual stacks of several depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErfScaling {
    pub depths: Vec<usize>,
    pub stds: Vec<f64>,
    /// `σ(last depth) / σ(first depth)`.
    pub ratio: f64,
    /// `√(last/first)`, the square-root law.
    pub predicted_ratio: f64,
    pub report: ErfReport,
}

/// Runs the deepest stack once; shallower depths are its top sub-chains.
pub fn erf_scaling<T: Real>(
    gen: &ResidualGenerator<T>,
    eps: T,
    depths: &[usize],
    probe: usize,
) -> Result<ErfScaling> {
    if depths.len() < 2 || depths.contains(&0) {
        return Err(CapacityError::InvalidInput(
            "need at least two positive depths".into(),
        ));
    }
    let deepest = *depths.iter().max().expect("non-empty");
    let chain = residual_chain(gen, eps, deepest)?;
    let report = erf_profile(&chain, probe)?;
    let stds: Vec<f64> = depths
        .iter()
        .map(|&d| {
            report
                .per_depth
                .iter()
                .find(|s| s.traversed == d)
                .map(|s| s.std)
                .expect("depth within chain")
        })
        .collect();
    let first = depths[0] as f64;
    let last = depths[depths.len() - 1] as f64;
    Ok(ErfScaling {
        depths: depths.to_vec(),
        ratio: stds[stds.len() - 1] / stds[0],
        predicted_ratio: (last / first).sqrt(),
        stds,
        report,
    })
}

/// Strongest straight path `i → i → … → i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxPathWeight {
    pub index: usize,
    /// `max_i Π_l (D_l)_ii`.
    pub weight: f64,
    /// `exp(Σ_l ((D_l)_ii − 1))`, i.e. `exp(Σ_l ε(Δ_l)_ii)` for residual layers.
    pub continuum_estimate: f64,
}

pub fn max_path_weight<T: Real>(chain: &LayerChain<T>) -> Result<MaxPathWeight> {
    let first = chain
        .layers
        .first()
        .ok_or_else(|| CapacityError::InvalidInput("empty chain".into()))?;
    let n = first.operator.n_in();
    for (idx, layer) in chain.layers.iter().enumerate() {
        let (r, c) = layer.operator.matrix().shape();
        if r != n || c != n {
            return Err(CapacityError::InvalidInput(format!(
                "layer {} is {r}x{c}; path weights need square {n}x{n} layers",
                idx + 1
            )));
        }
    }
    let mut best = MaxPathWeight {
        index: 0,
        weight: -1.0,
        continuum_estimate: 0.0,
    };
    for i in 0..n {
        let mut w = T::one();
        let mut exponent = T::zero();
        for layer in &chain.layers {
            let d = layer.operator.matrix()[(i, i)];
            w *= d;
            exponent += d - T::one();
        }
        if w.as_f64() > best.weight {
            best = MaxPathWeight {
                index: i,
                weight: w.as_f64(),
                continuum_estimate: exponent.exp().as_f64(),
            };
        }
    }
    Ok(best)
}

/// `r^{−L}`, the weight of every path through `L` uniform layers of receptive field `r`.
pub fn uniform_path_weight<T: Real>(r: usize, layers: usize) -> Result<T> {
    if r == 0 || layers == 0 {
        return Err(CapacityError::InvalidInput("r and L must be >= 1".into()));
    }
    let layers = i32::try_from(layers)
        .map_err(|_| CapacityError::InvalidInput("L too large".into()))?;
    Ok(T::one() / T::from_count(r).powi(layers))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShatterReport {
    pub max_path_weight: f64,
    pub continuum_estimate: f64,
    pub uniform_weight: f64,
    #[serde(rename = "L")]
    pub layers: usize,
    /// Largest column support among the layers.
    pub r: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

pub fn shatter_report<T: Real>(chain: &LayerChain<T>, eps: Option<f64>) -> Result<ShatterReport> {
    let max = max_path_weight(chain)?;
    let r = chain
        .layers
        .iter()
        .flat_map(|l| {
            let m = l.operator.matrix();
            (0..m.ncols()).map(move |j| (0..m.nrows()).filter(|&i| m[(i, j)] != T::zero()).count())
        })
        .max()
        .unwrap_or(1)
        .max(1);
    Ok(ShatterReport {
        max_path_weight: max.weight,
        continuum_estimate: max.continuum_estimate,
        uniform_weight: uniform_path_weight::<f64>(r, chain.len())?,
        layers: chain.len(),
        r,
        eps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnumeration {
    pub paths: usize,
    pub total_weight: f64,
    pub max_path_weight: f64,
    /// Indices `i_0, …, i_L` of the heaviest path.
    pub max_path: Vec<usize>,
}

/// Brute-force sum of `Π_k (D_k)_{i_{k−1} i_k}` over every path from input
/// index `start` to top index `end`. Only non-zero transitions are followed;
/// more than [`MAX_ENUMERATED_PATHS`] such paths is an error.
pub fn enumerate_path_weights<T: Real>(
    chain: &LayerChain<T>,
    start: usize,
    end: usize,
) -> Result<PathEnumeration> {
    chain.validate()?;
    let depth = chain.len();
    if depth == 0 {
        return Err(CapacityError::InvalidInput("empty chain".into()));
    }
    let n0 = chain.layers[0].operator.n_in();
    let nl = chain.layers[depth - 1].operator.n_out();
    if start >= n0 || end >= nl {
        return Err(CapacityError::InvalidInput(format!(
            "path endpoints ({start}, {end}) out of range ({n0}, {nl})"
        )));
    }
    // counts[k][i]: number of non-zero paths from index i of layer k to `end`.
    let mut counts: Vec<Vec<f64>> = vec![Vec::new(); depth + 1];
    counts[depth] = (0..nl).map(|i| if i == end { 1.0 } else { 0.0 }).collect();
    for k in (0..depth).rev() {
        let m = chain.layers[k].operator.matrix();
        counts[k] = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != T::zero())
                    .map(|j| counts[k + 1][j])
                    .sum()
            })
            .collect();
    }
    let total_paths = counts[0][start];
    if total_paths > MAX_ENUMERATED_PATHS {
        return Err(CapacityError::PathGuard {
            paths: total_paths,
            limit: MAX_ENUMERATED_PATHS,
        });
    }

    struct Walk<'a, T> {
        chain: &'a LayerChain<T>,
        counts: &'a [Vec<f64>],
        path: Vec<usize>,
        total: T,
        best: T,
        best_path: Vec<usize>,
        paths: usize,
    }

    impl<T: Real> Walk<'_, T> {
        fn visit(&mut self, k: usize, weight: T) {
            if k == self.chain.len() {
                self.paths += 1;
                self.total += weight;
                if weight > self.best {
                    self.best = weight;
                    self.best_path = self.path.clone();
                }
                return;
            }
            let m = self.chain.layers[k].operator.matrix();
            let i = *self.path.last().expect("path starts at `start`");
            for j in 0..m.ncols() {
                let d = m[(i, j)];
                if d == T::zero() || self.counts[k + 1][j] == 0.0 {
                    continue;
                }
                self.path.push(j);
                self.visit(k + 1, weight * d);
                self.path.pop();
            }
        }
    }

    let mut walk = Walk {
        chain,
        counts: &counts,
        path: vec![start],
        total: T::zero(),
        best: T::zero(),
        best_path: Vec::new(),
        paths: 0,
    };
    walk.visit(0, T::one());
    Ok(PathEnumeration {
        paths: walk.paths,
        total_weight: walk.total.as_f64(),
        max_path_weight: walk.best.as_f64(),
        max_path: walk.best_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deeplimit::{residual_generator, Boundary};
    use crate::matrix::Matrix;
    use crate::propagate::{LayerFlavor, PropagationOperator};

    #[test]
    fn uniform_weights() {
        assert_eq!(uniform_path_weight::<f64>(1, 17).unwrap(), 1.0);
        assert_eq!(uniform_path_weight::<f64>(3, 5).unwrap(), 1.0 / 243.0);
        assert_eq!(uniform_path_weight::<f64>(2, 10).unwrap(), 1.0 / 1024.0);
        assert!(uniform_path_weight::<f64>(0, 1).is_err());
    }

    #[test]
    fn residual_max_path_weight() {
        // Δ_ii = −1 ⇒ D = 2·0.5, diagonal of I + 0.1Δ is 0.9.
        let g = residual_generator::<f64>(9, 0.0, 0.5, Boundary::Periodic).unwrap();
        let chain = residual_chain(&g, 0.1, 10).unwrap();
        let w = max_path_weight(&chain).unwrap();
        assert!((w.weight - 0.348_678_440_1).abs() < 1e-12);
        assert!((w.continuum_estimate - (-1.0f64).exp()).abs() < 1e-12);

        let id = LayerChain::from_operators(vec![PropagationOperator::<f64>::identity(4); 3], LayerFlavor::Standard);
        assert_eq!(max_path_weight(&id).unwrap().weight, 1.0);

        let uniform = LayerChain::from_operators(vec![PropagationOperator::<f64>::uniform(3, 3); 5], LayerFlavor::Standard);
        let w = max_path_weight(&uniform).unwrap();
        assert!((w.weight - uniform_path_weight::<f64>(3, 5).unwrap()).abs() < 1e-17);

        let rect = LayerChain::from_operators(vec![PropagationOperator::<f64>::uniform(3, 2)], LayerFlavor::Standard);
        assert!(max_path_weight(&rect).is_err());
    }

    #[test]
    fn enumeration_single_layer_and_uniform() {
        let d = PropagationOperator::new(Matrix::from_rows(&[vec![0.25, 0.5], vec![0.75, 0.5]]).unwrap()).unwrap();
        let chain = LayerChain::from_operators(vec![d], LayerFlavor::Standard);
        let e = enumerate_path_weights(&chain, 1, 0).unwrap();
        assert_eq!(e.paths, 1);
        assert_eq!(e.total_weight, 0.75);

        let uniform = LayerChain::from_operators(vec![PropagationOperator::<f64>::uniform(2, 2); 3], LayerFlavor::Standard);
        for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let e = enumerate_path_weights(&uniform, a, b).unwrap();
            assert_eq!(e.paths, 4);
            assert_eq!(e.max_path_weight, 0.125);
            assert_eq!(e.total_weight, 0.5);
        }
    }

    #[test]
    fn enumeration_guard() {
        let chain = LayerChain::from_operators(vec![PropagationOperator::<f64>::uniform(10, 10); 8], LayerFlavor::Standard);
        assert!(matches!(
            enumerate_path_weights(&chain, 0, 0),
            Err(CapacityError::PathGuard { .. })
        ));
    }

    #[test]
    fn erf_identity_has_zero_width() {
        let chain = LayerChain::from_operators(vec![PropagationOperator::<f64>::identity(5)], LayerFlavor::Standard);
        let r = erf_profile(&chain, 2).unwrap();
        assert_eq!(r.per_depth.len(), 1);
        assert_eq!(r.per_depth[0].std, 0.0);
        assert!(r.fitted_exponent.is_none());
        assert!(erf_profile(&chain, 0).unwrap().boundary_flag);
    }

    #[test]
    fn erf_square_root_law() {
        let g = residual_generator::<f64>(201, 0.0, 1.0, Boundary::Periodic).unwrap();
        let s = erf_scaling(&g, 0.1, &[25, 100], 100).unwrap();
        assert!((s.ratio - 2.0).abs() <= 0.2);
        let exponent = s.report.fitted_exponent.unwrap();
        assert!((0.45..=0.55).contains(&exponent), "{exponent}");
        assert!(!s.report.boundary_flag);
        // Gaussian width √(2·D·ε·k) after k layers.
        for d in &s.report.per_depth {
            let predicted = (2.0 * 0.1 * d.traversed as f64).sqrt();
            assert!((d.std - predicted).abs() <= 0.05 * predicted);
        }
    }

    #[test]
    fn line_fit_recovers_slope() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 1.5, 2.0, 2.5];
        let (s, c, r) = fit_line(&x, &y).unwrap();
        assert!((s - 0.5).abs() < 1e-15 && (c - 1.0).abs() < 1e-15 && r < 1e-15);
        assert!(fit_line(&[1.0], &[1.0]).is_none());
    }
}
