use std::fs;
use std::path::{Path, PathBuf};

use capnet::analyze::{erf_profile, erf_scaling, shatter_report};
use capnet::deeplimit::{
    compare_markov_pde, evolve_markov, gaussian_solution, residual_chain, residual_generator,
    Boundary, DeepLimitConfig, PdeField,
};
use capnet::{
    decoupling_nu, empirical_spatial_capacity, estimate_nu_monte_carlo, propagate_chain,
    Activation, ExperimentConfig, LayerChain, LayerFlavor, PropagationOperator, SpatialCapacity,
};
use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::output::{emit_json, fmt_float, write_csv};
use crate::spec::{build_chain, BuiltChain, NetworkSpec};

pub struct Outputs {
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl Outputs {
    fn json(&self, value: &impl Serialize) -> CliResult<()> {
        emit_json(value, self.out.as_deref())
    }
}

pub fn parse_activation(text: &str) -> CliResult<Activation> {
    text.parse()
        .map_err(|e| CliError::Usage(format!("cannot parse activation '{text}': {e}")))
}

#[derive(Serialize)]
struct NuValue {
    nu: f64,
}

pub fn nu(activation: &str, mc: Option<usize>, seed: u64, io: &Outputs) -> CliResult<()> {
    let act = parse_activation(activation)?;
    match mc {
        None => io.json(&NuValue {
            nu: decoupling_nu(&act)?,
        }),
        Some(n) => {
            info!("Monte Carlo estimate of nu for {act} with {n} samples, seed {seed}");
            io.json(&estimate_nu_monte_carlo(&act, n, seed).map_err(|e| CliError::Usage(e.to_string()))?)
        }
    }
}

fn load_spec(path: &Path) -> CliResult<(NetworkSpec, BuiltChain, String)> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read spec {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Spec(format!("{} is not UTF-8", path.display())))?;
    let spec = NetworkSpec::parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let built = build_chain(&spec, base)?;
    let hash = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    info!("loaded {} ({} layers after repeats)", path.display(), built.chain.len());
    Ok((spec, built, hash))
}

pub fn check(spec_path: &Path, io: &Outputs) -> CliResult<()> {
    let (spec, built, _) = load_spec(spec_path)?;
    info!("spec ok: {} layers", built.chain.len());
    let mut text = spec.to_json();
    text.push('\n');
    match &io.out {
        Some(p) => fs::write(p, text)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Metadata {
    tool: &'static str,
    version: &'static str,
    spec_sha256: String,
    seeds: Vec<u64>,
}

impl Metadata {
    fn new(spec_sha256: String, seeds: Vec<u64>) -> Self {
        Metadata {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            spec_sha256,
            seeds,
        }
    }
}

#[derive(Serialize)]
struct LayerProfile {
    layer: usize,
    total: f64,
    kappa: SpatialCapacity<f64>,
}

#[derive(Serialize)]
struct RunReport {
    metadata: Metadata,
    /// Largest `|total_l − total_L|`.
    total_drift: f64,
    totals: Vec<f64>,
    layers: Vec<LayerProfile>,
}

pub fn chain(spec_path: &Path, io: &Outputs) -> CliResult<()> {
    let (_, built, hash) = load_spec(spec_path)?;
    let profiles = propagate_chain(&built.chain, &built.top)?;
    let totals: Vec<f64> = profiles.iter().map(|p| p.total()).collect();
    let top_total = built.top.total();
    let total_drift = totals.iter().fold(0.0f64, |m, t| m.max((t - top_total).abs()));
    if let Some(csv) = &io.csv {
        let rows: Vec<Vec<String>> = profiles
            .iter()
            .enumerate()
            .flat_map(|(l, p)| {
                p.values()
                    .iter()
                    .enumerate()
                    .map(move |(i, &v)| vec![l.to_string(), i.to_string(), fmt_float(v)])
            })
            .collect();
        write_csv(csv, &["layer", "coordinate", "kappa"], &rows)?;
    }
    io.json(&RunReport {
        metadata: Metadata::new(hash, built.seeds),
        total_drift,
        totals,
        layers: profiles
            .into_iter()
            .enumerate()
            .map(|(layer, kappa)| LayerProfile {
                layer,
                total: kappa.total(),
                kappa,
            })
            .collect(),
    })
}

#[derive(Serialize)]
struct LayerView {
    metadata: Metadata,
    layer: usize,
    flavor: LayerFlavor,
    activation: Activation,
    n_in: usize,
    n_out: usize,
    /// Rows of `D`, input index first.
    operator: Vec<Vec<f64>>,
    kappa_out: SpatialCapacity<f64>,
    kappa_in: SpatialCapacity<f64>,
}

pub fn layer(spec_path: &Path, index: usize, io: &Outputs) -> CliResult<()> {
    let (_, built, hash) = load_spec(spec_path)?;
    let depth = built.chain.len();
    if index == 0 || index > depth {
        return Err(CliError::Usage(format!("--index must be in 1..={depth}, got {index}")));
    }
    let profiles = propagate_chain(&built.chain, &built.top)?;
    let l = &built.chain.layers[index - 1];
    let d = l.operator.matrix();
    io.json(&LayerView {
        metadata: Metadata::new(hash, built.seeds.clone()),
        layer: index,
        flavor: l.flavor,
        activation: l.activation.clone(),
        n_in: l.operator.n_in(),
        n_out: l.operator.n_out(),
        operator: (0..d.nrows()).map(|i| d.row(i).to_vec()).collect(),
        kappa_out: profiles[index].clone(),
        kappa_in: profiles[index - 1].clone(),
    })
}

pub struct GridArgs {
    pub n: usize,
    pub eps: f64,
    pub layers: usize,
    pub drift: f64,
    pub diffusion: f64,
    pub probe: Option<usize>,
    pub boundary: Boundary,
}

impl GridArgs {
    fn probe(&self) -> CliResult<usize> {
        let p = self.probe.unwrap_or(self.n / 2);
        if p >= self.n {
            return Err(CliError::Usage(format!("probe {p} outside grid of {}", self.n)));
        }
        Ok(p)
    }
}

pub fn pde(args: &GridArgs, refinements: usize, io: &Outputs) -> CliResult<()> {
    let gen = residual_generator(args.n, args.drift, args.diffusion, args.boundary)?;
    let cfg = DeepLimitConfig::new(args.eps, args.layers);
    let top = SpatialCapacity::dirac(args.n, args.probe()?, 1.0)?;
    let report = compare_markov_pde(&gen, &cfg, &top, refinements)?;
    if !report.mass_within_grid {
        log::warn!("Gaussian mass leaves the grid; widen n");
    }
    if let Some(csv) = &io.csv {
        let markov = evolve_markov(&gen, &cfg, &top)?;
        let gauss = gaussian_solution(
            &PdeField::from_capacity(&top),
            args.drift,
            args.diffusion,
            cfg.depth_time(),
        )?;
        let rows: Vec<Vec<String>> = markov[0]
            .values()
            .iter()
            .zip(&gauss.values)
            .enumerate()
            .map(|(i, (&m, &g))| vec![i.to_string(), fmt_float(m), fmt_float(g)])
            .collect();
        write_csv(csv, &["coordinate", "markov", "gaussian"], &rows)?;
    }
    io.json(&report)
}

fn erf_csv(path: &Path, report: &capnet::ErfReport) -> CliResult<()> {
    let rows: Vec<Vec<String>> = report
        .per_depth
        .iter()
        .map(|d| vec![d.layer.to_string(), d.traversed.to_string(), fmt_float(d.std)])
        .collect();
    write_csv(path, &["layer", "traversed", "std"], &rows)
}

pub fn erf_generator(args: &GridArgs, depths: &[usize], io: &Outputs) -> CliResult<()> {
    let gen = residual_generator(args.n, args.drift, args.diffusion, args.boundary)?;
    let scaling = erf_scaling(&gen, args.eps, depths, args.probe()?)?;
    if scaling.report.boundary_flag {
        log::warn!("probe is within five widths of the grid edge");
    }
    if let Some(csv) = &io.csv {
        erf_csv(csv, &scaling.report)?;
    }
    io.json(&scaling)
}

pub fn erf_spec(spec_path: &Path, probe: Option<usize>, io: &Outputs) -> CliResult<()> {
    let (_, built, _) = load_spec(spec_path)?;
    let n_top = built.top.len();
    let probe = probe.unwrap_or(n_top / 2);
    let report = erf_profile(&built.chain, probe)?;
    if let Some(csv) = &io.csv {
        erf_csv(csv, &report)?;
    }
    io.json(&report)
}

/// `key=value` pairs.
fn kv(params: &[String]) -> CliResult<Vec<(String, String)>> {
    params
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Usage(format!("expected key=value, got '{p}'")))
        })
        .collect()
}

fn take<T: std::str::FromStr>(pairs: &[(String, String)], key: &str, default: Option<T>) -> CliResult<T> {
    match pairs.iter().find(|(k, _)| k == key) {
        Some((_, v)) => v
            .parse()
            .map_err(|_| CliError::Usage(format!("invalid value '{v}' for {key}"))),
        None => default.ok_or_else(|| CliError::Usage(format!("missing parameter {key}=..."))),
    }
}

fn reject_unknown(pairs: &[(String, String)], allowed: &[&str]) -> CliResult<()> {
    match pairs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        Some((k, _)) => Err(CliError::Usage(format!(
            "unknown parameter '{k}' (expected one of {})",
            allowed.join(", ")
        ))),
        None => Ok(()),
    }
}

pub enum ShatterMode {
    Uniform,
    Residual,
    Spec(PathBuf),
}

pub fn shatter(mode: ShatterMode, params: &[String], io: &Outputs) -> CliResult<()> {
    let pairs = kv(params)?;
    let report = match mode {
        ShatterMode::Uniform => {
            reject_unknown(&pairs, &["r", "L"])?;
            let r: usize = take(&pairs, "r", None)?;
            let l: usize = take(&pairs, "L", None)?;
            if r == 0 || l == 0 {
                return Err(CliError::Usage("r and L must be >= 1".into()));
            }
            let chain = LayerChain::from_operators(
                vec![PropagationOperator::<f64>::uniform(r, r); l],
                LayerFlavor::Standard,
            );
            shatter_report(&chain, None)?
        }
        ShatterMode::Residual => {
            reject_unknown(&pairs, &["eps", "L", "n", "D", "v"])?;
            let eps: f64 = take(&pairs, "eps", Some(0.1))?;
            let l: usize = take(&pairs, "L", Some(10))?;
            let n: usize = take(&pairs, "n", Some(9))?;
            let d: f64 = take(&pairs, "D", Some(0.5))?;
            let v: f64 = take(&pairs, "v", Some(0.0))?;
            let gen = residual_generator(n, v, d, Boundary::Periodic)?;
            shatter_report(&residual_chain(&gen, eps, l)?, Some(eps))?
        }
        ShatterMode::Spec(path) => {
            reject_unknown(&pairs, &[])?;
            let (_, built, _) = load_spec(&path)?;
            shatter_report(&built.chain, built.eps)?
        }
    };
    io.json(&report)
}

pub struct VerifyArgs {
    pub n: usize,
    pub m: usize,
    pub selector: usize,
    pub samples: usize,
    pub activation: String,
}

pub fn verify(args: &VerifyArgs, seed: u64, io: &Outputs) -> CliResult<()> {
    let act = parse_activation(&args.activation)?;
    let config = ExperimentConfig::<f64>::random(args.n, args.m, args.selector, args.samples, seed)
        .map_err(|e| CliError::Usage(e.to_string()))?
        .with_activation(act);
    info!(
        "verify: n={} m={} selector={:?} samples={} seed={seed}",
        args.n, args.m, config.param_selector, args.samples
    );
    let report = empirical_spatial_capacity(&config)?;
    if let Some(csv) = &io.csv {
        let theory = report.kappa_theory.as_ref();
        let rows: Vec<Vec<String>> = report
            .kappa_hat
            .values()
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                vec![
                    i.to_string(),
                    fmt_float(h),
                    theory.map(|t| fmt_float(t.values()[i])).unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(csv, &["coordinate", "kappa_hat", "kappa_theory"], &rows)?;
    }
    io.json(&report)
}
