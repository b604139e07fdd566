use capnet::augment::AugmentedLayout;
use capnet::oracle::{empirical_augmented_basis, empirical_loss, fit_and_verify};
use capnet::{
    augmented_spatial_profile, empirical_sigma_tilde, empirical_spatial_capacity,
    fit_optimal_last_layer, Activation, AugmentedTarget, ExperimentConfig, InputSampler, Matrix,
    ProjectionMatrix, SpatialCapacity,
};

/// `κ̂` alone, without the stationarity fit attached by `empirical_spatial_capacity`.
fn kappa_hat(config: &ExperimentConfig<f64>) -> SpatialCapacity<f64> {
    let st = empirical_sigma_tilde(
        &config.projection,
        &config.activation,
        &config.sampler,
        config.n_samples,
        config.seed,
    )
    .unwrap();
    let k = empirical_augmented_basis(config, st.entries()).unwrap();
    augmented_spatial_profile(&k, &AugmentedLayout::standard(config.n(), config.m())).unwrap()
}

fn closed_form(config: &ExperimentConfig<f64>) -> Vec<f64> {
    (0..config.n())
        .map(|i| {
            config
                .param_selector
                .iter()
                .map(|&j| config.projection.matrix()[(i, j)].powi(2))
                .sum()
        })
        .collect()
}

fn block(st: &Matrix<f64>, n: usize, j: usize, k: usize) -> Matrix<f64> {
    Matrix::from_fn(n, n, |a, b| st[(j * n + a, k * n + b)])
}

#[test]
fn pseudo_random_off_diagonal_blocks_vanish() {
    let config = ExperimentConfig::<f64>::random(5, 4, 1, 100_000, 21).unwrap();
    let st = empirical_sigma_tilde(&config.projection, &config.activation, &config.sampler, 100_000, 21).unwrap();
    let n = config.n();
    // Entry (a, b) of block (j, k) is a mean of η_j η_k y_a y_b with second moment 1 (a ≠ b) or 3.
    let floor = (((n * n + 2 * n) as f64) / 100_000.0).sqrt();
    for j in 0..config.m() {
        for k in 0..config.m() {
            let b = block(st.entries(), n, j, k);
            if j == k {
                assert!(b.sub(&Matrix::identity(n)).unwrap().frobenius_norm() <= 4.0 * (2.0 * floor));
            } else {
                assert!(b.frobenius_norm() <= 4.0 * floor, "block ({j},{k}): {}", b.frobenius_norm());
            }
        }
    }
}

/// With `p_1 = e_1`, `p_2 = e_2` the coordinates outside both supports are
/// independent of the pre-activations, where the off-diagonal block is `ν Σ`.
#[test]
fn relu_off_diagonal_block_away_from_supports() {
    let n = 6;
    let p = ProjectionMatrix::new(Matrix::from_fn(n, 2, |i, j| if i == j { 1.0 } else { 0.0 })).unwrap();
    let st = empirical_sigma_tilde(&p, &Activation::Relu, &InputSampler::StandardNormal, 100_000, 4).unwrap();
    let off = block(st.entries(), n, 0, 1);
    let free: Vec<usize> = (2..n).collect();
    let mut dev_sq = 0.0;
    let mut floor_sq = 0.0f64;
    for &a in &free {
        for &b in &free {
            let expected = if a == b { 0.5 } else { 0.0 };
            dev_sq += (off[(a, b)] - expected).powi(2);
            floor_sq += if a == b { 3.0 } else { 1.0 } / 100_000.0;
        }
    }
    assert!(dev_sq.sqrt() <= 4.0 * floor_sq.sqrt(), "{} vs {}", dev_sq.sqrt(), floor_sq.sqrt());
    // Inside the supports the factorised form does not hold: E[η(y1) η(y2) y1 y2] = 1/π.
    assert!((off[(0, 1)] - 1.0 / std::f64::consts::PI).abs() < 0.02, "{}", off[(0, 1)]);
}

#[test]
fn closed_form_capacity_recovered() {
    let config = ExperimentConfig::<f64>::random(8, 8, 3, 100_000, 2024).unwrap();
    let report = empirical_spatial_capacity(&config).unwrap();
    let theory = closed_form(&config);
    for (a, b) in report.kappa_theory.as_ref().unwrap().values().iter().zip(&theory) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(report.max_abs_dev.unwrap() <= 1e-2, "{report:?}");
    assert!((report.total_hat - 3.0).abs() <= 1e-2);
    assert!(report.stationarity_residual <= 4.0 * report.stationarity_noise_floor);
}

#[test]
fn single_feature_selector_gives_squared_column() {
    let mut config = ExperimentConfig::<f64>::random(6, 5, 1, 50_000, 8).unwrap();
    config.param_selector = vec![2];
    let hat = kappa_hat(&config);
    let col = config.projection.column(2);
    assert!((hat.total() - 1.0).abs() < 1e-9);
    for (h, p) in hat.values().iter().zip(&col) {
        assert!((h - p * p).abs() <= 2e-2);
    }
}

/// Averaged over seeds, `max |κ̂ − κ|` halves each time `N` quadruples.
#[test]
fn deviation_shrinks_as_inverse_root_n() {
    let sizes = [10_000usize, 40_000, 160_000];
    let seeds = 0..12u64;
    let avg: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            seeds
                .clone()
                .map(|s| {
                    let c = ExperimentConfig::<f64>::random(8, 8, 3, n, 500 + s).unwrap();
                    let hat = kappa_hat(&c);
                    hat.values()
                        .iter()
                        .zip(closed_form(&c))
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 12.0
        })
        .collect();
    for w in avg.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.4..=2.6).contains(&ratio), "{avg:?}");
    }
}

#[test]
fn stationarity_holds_on_random_configs() {
    for s in 0..5u64 {
        let config = ExperimentConfig::<f64>::random(6, 7, 3, 60_000, 70 + s).unwrap();
        let target = AugmentedTarget::random(&config, 0.3, 900 + s);
        let (a, report) = fit_and_verify(&config, &target).unwrap();
        assert!(report.noise_floor > 0.0);
        assert!(report.residual <= 4.0 * report.noise_floor, "config {s}: {report:?}");
        let base = empirical_loss(&config, &a, &target).unwrap();
        for &j in &config.param_selector {
            for delta in [1e-3, -1e-3] {
                let mut moved = a.clone();
                moved[j] += delta;
                assert!(empirical_loss(&config, &moved, &target).unwrap() > base);
            }
        }
    }
}

#[test]
fn residual_loss_is_the_orthogonal_variance() {
    let config = ExperimentConfig::<f64>::random(5, 4, 2, 40_000, 3).unwrap();
    let mut a0 = vec![0.0; config.m()];
    a0[config.param_selector[0]] = 1.5;
    a0[config.param_selector[1]] = -0.7;
    let tau = 0.4;
    let target = AugmentedTarget::realizable(&config, &a0).unwrap().with_noise(tau, 17);
    let a = fit_optimal_last_layer(&config, &target).unwrap();
    let loss = empirical_loss(&config, &a, &target).unwrap();
    assert!((loss - tau * tau).abs() <= 1e-3 * tau * tau, "{loss}");
    for (x, y) in a.iter().zip(&a0) {
        assert!((x - y).abs() <= 4.0 * tau / (40_000f64).sqrt() * 2.0);
    }
}

#[test]
fn reports_are_bit_identical() {
    let config = ExperimentConfig::<f64>::random(5, 5, 2, 20_000, 33).unwrap();
    let a = serde_json::to_string(&empirical_spatial_capacity(&config).unwrap()).unwrap();
    let b = serde_json::to_string(&empirical_spatial_capacity(&config).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn linear_control_reproduces_input_space_capacity() {
    let config = ExperimentConfig::<f64>::random(5, 4, 2, 20_000, 12)
        .unwrap()
        .with_activation(Activation::Linear);
    let report = empirical_spatial_capacity(&config).unwrap();
    let st = empirical_sigma_tilde(&config.projection, &Activation::Linear, &config.sampler, 20_000, 12).unwrap();
    let n = config.n();
    let sigma_hat = block(st.entries(), n, 0, 0);
    let mut pk = Matrix::zeros(n, config.param_selector.len());
    for (c, &j) in config.param_selector.iter().enumerate() {
        pk.set_column(c, &config.projection.column(j));
    }
    let k = capnet::orthonormal_basis(&sigma_hat.matmul(&pk).unwrap(), 1e-10).unwrap();
    let stacked = capnet::linear_stacked_basis(&k, config.m()).unwrap();
    let from_stacked = augmented_spatial_profile(&stacked, &AugmentedLayout::standard(n, config.m())).unwrap();
    assert!(report.kappa_hat.max_abs_diff(&from_stacked) <= 1e-6);
    assert!(report.kappa_hat.max_abs_diff(&capnet::spatial_profile(&k)) <= 1e-6);
}
