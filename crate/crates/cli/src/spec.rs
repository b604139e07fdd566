//! JSON network specifications.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use capnet::deeplimit::{residual_generator, Boundary};
use capnet::seeding::{derive_seed, gaussian_matrix};
use capnet::{
    differential_propagation_matrix, propagation_matrix, Activation, ChainLayer, LayerChain,
    LayerFlavor, Matrix, SpatialCapacity,
};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub top_capacity: TopCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Residual,
    Differential,
}

fn one() -> usize {
    1
}

fn is_one(x: &usize) -> bool {
    *x == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub n_in: usize,
    pub n_out: usize,
    #[serde(default = "Activation::pseudo_random")]
    pub activation: Activation,
    pub weights: WeightSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub repeat: usize,
}

/// `path` | `random_gaussian:<seed>` | `uniform:<r>` | `residual:<eps>,<v>,<D>`.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    File(PathBuf),
    RandomGaussian(u64),
    Uniform(usize),
    Residual { eps: f64, drift: f64, diffusion: f64 },
}

impl FromStr for WeightSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |v: &str, what: &str| -> Result<f64, String> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("invalid {what} '{v}' in weights '{s}'"))
        };
        if let Some(rest) = s.strip_prefix("random_gaussian:") {
            rest.trim()
                .parse()
                .map(WeightSource::RandomGaussian)
                .map_err(|_| format!("invalid seed in weights '{s}'"))
        } else if let Some(rest) = s.strip_prefix("uniform:") {
            match rest.trim().parse::<usize>() {
                Ok(r) if r >= 1 => Ok(WeightSource::Uniform(r)),
                _ => Err(format!("invalid receptive field in weights '{s}'")),
            }
        } else if let Some(rest) = s.strip_prefix("residual:") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 3 {
                return Err(format!("weights '{s}' must be residual:<eps>,<v>,<D>"));
            }
            Ok(WeightSource::Residual {
                eps: num(parts[0], "eps")?,
                drift: num(parts[1], "drift")?,
                diffusion: num(parts[2], "diffusion")?,
            })
        } else if s.trim().is_empty() {
            Err("empty weights".into())
        } else {
            Ok(WeightSource::File(PathBuf::from(s)))
        }
    }
}

impl fmt::Display for WeightSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSource::File(p) => write!(f, "{}", p.display()),
            WeightSource::RandomGaussian(seed) => write!(f, "random_gaussian:{seed}"),
            WeightSource::Uniform(r) => write!(f, "uniform:{r}"),
            WeightSource::Residual { eps, drift, diffusion } => {
                write!(f, "residual:{eps:?},{drift:?},{diffusion:?}")
            }
        }
    }
}

impl Serialize for WeightSource {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WeightSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Capacity placed on the top layer's features.
#[derive(Debug, Clone, PartialEq)]
pub enum TopCapacity {
    Vector(Vec<f64>),
    Dirac(usize),
    /// One unit per feature.
    Uniform,
}

impl Serialize for TopCapacity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TopCapacity::Vector(v) => v.serialize(s),
            TopCapacity::Dirac(i) => s.collect_str(&format_args!("dirac:{i}")),
            TopCapacity::Uniform => s.serialize_str("uniform"),
        }
    }
}

impl<'de> Deserialize<'de> for TopCapacity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Vector(Vec<f64>),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Vector(v) => Ok(TopCapacity::Vector(v)),
            Raw::Text(t) if t == "uniform" => Ok(TopCapacity::Uniform),
            Raw::Text(t) => t
                .strip_prefix("dirac:")
                .and_then(|i| i.trim().parse().ok())
                .map(TopCapacity::Dirac)
                .ok_or_else(|| {
                    serde::de::Error::custom(format!(
                        "top_capacity '{t}' must be a vector, \"dirac:<index>\" or \"uniform\""
                    ))
                }),
        }
    }
}

impl NetworkSpec {
    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Spec(format!("invalid spec: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises")
    }
}

/// A spec resolved into operators.
pub struct BuiltChain {
    pub chain: LayerChain<f64>,
    pub top: SpatialCapacity<f64>,
    pub seeds: Vec<u64>,
    /// Common `ε` when every layer is residual with the same step.
    pub eps: Option<f64>,
}

/// Every input `i` of output `j` in a window of `r` consecutive inputs
/// (wrapping) starting at `⌊j·n_in/n_out⌋ − ⌊r/2⌋` gets weight `1/√r`.
pub fn uniform_window(n_in: usize, n_out: usize, r: usize) -> Matrix<f64> {
    let w = 1.0 / (r as f64).sqrt();
    let mut m = Matrix::zeros(n_in, n_out);
    for j in 0..n_out {
        let centre = j * n_in / n_out;
        for k in 0..r {
            let i = (centre + n_in * r + k - r / 2) % n_in;
            m[(i, j)] = w;
        }
    }
    m
}

pub fn read_matrix_csv(path: &Path) -> CliResult<Matrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Spec(format!("cannot read weights {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| CliError::Spec(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    CliError::Spec(format!("{}: row {}: '{f}' is not a number", path.display(), line + 1))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows).map_err(|e| CliError::at(path.display(), e))
}

impl LayerSpec {
    fn weight_matrix(&self, idx: usize, rep: usize, base: &Path) -> CliResult<Matrix<f64>> {
        let at = |msg: String| CliError::Spec(format!("layer {idx}: {msg}"));
        let m = match &self.weights {
            WeightSource::File(p) => read_matrix_csv(&base.join(p)).map_err(|e| at(e.to_string()))?,
            WeightSource::RandomGaussian(seed) => {
                gaussian_matrix(self.n_in, self.n_out, derive_seed(*seed, rep as u64))
            }
            WeightSource::Uniform(r) => {
                if *r > self.n_in {
                    return Err(at(format!("receptive field {r} exceeds n_in {}", self.n_in)));
                }
                uniform_window(self.n_in, self.n_out, *r)
            }
            WeightSource::Residual { .. } => {
                return Err(at(format!("'{}' weights need kind residual", self.weights)))
            }
        };
        if m.shape() != (self.n_in, self.n_out) {
            return Err(at(format!(
                "weights are {}x{}, expected n_in x n_out = {}x{}",
                m.nrows(),
                m.ncols(),
                self.n_in,
                self.n_out
            )));
        }
        Ok(m)
    }
}

pub fn build_chain(spec: &NetworkSpec, base: &Path) -> CliResult<BuiltChain> {
    if spec.layers.is_empty() {
        return Err(CliError::Spec("spec has no layers".into()));
    }
    let mut layers = Vec::new();
    let mut seeds = Vec::new();
    let mut eps_all: Option<Option<f64>> = None;
    for (k, layer) in spec.layers.iter().enumerate() {
        let idx = k + 1;
        let at = |msg: String| CliError::Spec(format!("layer {idx}: {msg}"));
        if layer.n_in == 0 || layer.n_out == 0 {
            return Err(at("n_in and n_out must be positive".into()));
        }
        if layer.repeat == 0 {
            return Err(at("repeat must be >= 1".into()));
        }
        if layer.repeat > 1 && layer.n_in != layer.n_out {
            return Err(at("repeated layers must be square".into()));
        }
        if let Some(next) = spec.layers.get(k + 1) {
            if next.n_in != layer.n_out {
                return Err(at(format!(
                    "n_out {} does not match layer {} n_in {}",
                    layer.n_out,
                    idx + 1,
                    next.n_in
                )));
            }
        }
        if !layer.activation.is_pseudo_random() {
            return Err(at(format!(
                "activation '{}' has no closed-form propagation; use pseudo_random",
                layer.activation
            )));
        }
        if layer.eps.is_some() && layer.kind != LayerKind::Differential {
            return Err(at("eps applies to differential layers only".into()));
        }
        if layer.boundary.is_some() && layer.kind != LayerKind::Residual {
            return Err(at("boundary applies to residual layers only".into()));
        }
        if let WeightSource::RandomGaussian(seed) = layer.weights {
            if !seeds.contains(&seed) {
                seeds.push(seed);
            }
        }
        let layer_eps = match (&layer.kind, &layer.weights) {
            (LayerKind::Residual, WeightSource::Residual { eps, .. }) => Some(*eps),
            _ => None,
        };
        eps_all = Some(match eps_all {
            None => layer_eps,
            Some(prev) if prev == layer_eps => prev,
            Some(_) => None,
        });
        for rep in 0..layer.repeat {
            let (operator, flavor) = match layer.kind {
                LayerKind::Dense => {
                    let w = layer.weight_matrix(idx, rep, base)?;
                    (
                        propagation_matrix(&w).map_err(|e| CliError::at(format!("layer {idx}"), e))?,
                        LayerFlavor::Standard,
                    )
                }
                LayerKind::Differential => {
                    let eps = layer
                        .eps
                        .ok_or_else(|| at("differential layers need eps".into()))?;
                    if layer.n_in != layer.n_out {
                        return Err(at("differential layers must be square".into()));
                    }
                    let w = layer.weight_matrix(idx, rep, base)?;
                    (
                        differential_propagation_matrix(&w, eps)
                            .map_err(|e| CliError::at(format!("layer {idx}"), e))?,
                        LayerFlavor::Differential { eps },
                    )
                }
                LayerKind::Residual => {
                    let WeightSource::Residual { eps, drift, diffusion } = layer.weights else {
                        return Err(at(format!(
                            "residual layers need residual:<eps>,<v>,<D> weights, got '{}'",
                            layer.weights
                        )));
                    };
                    if layer.n_in != layer.n_out {
                        return Err(at("residual layers must be square".into()));
                    }
                    let gen = residual_generator(
                        layer.n_in,
                        drift,
                        diffusion,
                        layer.boundary.unwrap_or_default(),
                    )
                    .map_err(|e| CliError::at(format!("layer {idx}"), e))?;
                    let op = gen
                        .step_operator(eps)
                        .map_err(|e| CliError::at(format!("layer {idx}"), e))?;
                    (op, LayerFlavor::Residual)
                }
            };
            layers.push(ChainLayer::new(operator, layer.activation.clone(), flavor));
        }
    }
    let n_top = spec.layers.last().expect("non-empty").n_out;
    let top = match &spec.top_capacity {
        TopCapacity::Vector(v) => {
            if v.len() != n_top {
                return Err(CliError::Spec(format!(
                    "top_capacity has {} entries, top layer has {n_top} features",
                    v.len()
                )));
            }
            SpatialCapacity::new(v.clone()).map_err(|e| CliError::at("top_capacity", e))?
        }
        TopCapacity::Dirac(i) => {
            SpatialCapacity::dirac(n_top, *i, 1.0).map_err(|e| CliError::at("top_capacity", e))?
        }
        TopCapacity::Uniform => SpatialCapacity::uniform(n_top, n_top as f64),
    };
    Ok(BuiltChain {
        chain: LayerChain::new(layers),
        top,
        seeds,
        eps: eps_all.flatten(),
    })
}
