//! Run configuration: a flat `key = value` text format.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys are dotted (`section.name`). Lists are comma-separated. Integer
//! ranges may be written `a..b` (inclusive). Unknown or repeated keys are
//! rejected.
//!
//! | key | value | default |
//! |-----|-------|---------|
//! | `map.family` | `dft`, `toy`, `walsh-V`, `walsh-W` | `dft` |
//! | `map.base` | `D >= 2` | `5` |
//! | `map.kept` | kept branches | `1,3` |
//! | `dims.list` | dimensions | |
//! | `dims.start`, `dims.k_max` | geometric `N₀·D^k`, `k = 0..k_max` | |
//! | `spectrum.parity` | `even`, `odd`, `full` | `full` |
//! | `spectrum.radii` | strictly increasing radii in `(0,1)` | empty |
//! | `spectrum.mu` | rescaling exponent | `log s / log D` |
//! | `sector.theta`, `sector.rho` | sector center and half-width | `0`, `π` |
//! | `transport.k` | lengths (`N = 4^k`) | |
//! | `transport.theta` | quasi-energies | `0` |
//! | `transport.theta_count` | `m` equally spaced angles (replaces `transport.theta`) | |
//! | `transport.method` | `resolvent`, `series` | `resolvent` |
//! | `transport.tol` | series tolerance | `1e-12` |
//! | `classical.resolution` | escape-grid side `M` | `243` |
//! | `classical.t_max` | escape-time horizon | `5` |
//! | `classical.transfer_k` | toy length for the transfer-matrix report | |
//! | `output.dir` | artifact directory | `out` |
//! | `run.dimension_cap` | largest `N` accepted by spectrum jobs | `6000` |
//! | `run.workers` | concurrent jobs | `1` |

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::classical::OpenBakerSpec;
use crate::error::{Error, Result};
use crate::quantize::{MapFamily, ParitySector, QuantumMapId};
use crate::spectral::{validate_radii, SectorQuery};
use crate::transport::{theta_grid, TransmissionMethod};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransportConfig {
    pub ks: Vec<usize>,
    pub thetas: Vec<f64>,
    pub method: TransmissionMethod,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassicalConfig {
    pub resolution: usize,
    pub t_max: u32,
    pub transfer_k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub family: MapFamily,
    pub spec: OpenBakerSpec,
    /// Expanded dimension list.
    pub dims: Vec<usize>,
    pub parity: ParitySector,
    pub radii: Vec<f64>,
    pub mu: Option<f64>,
    pub sector_theta: f64,
    pub sector_rho: f64,
    pub transport: Option<TransportConfig>,
    pub classical: ClassicalConfig,
    pub output_dir: PathBuf,
    pub dimension_cap: usize,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family: MapFamily::Dft,
            spec: OpenBakerSpec::five_baker(),
            dims: Vec::new(),
            parity: ParitySector::Full,
            radii: Vec::new(),
            mu: None,
            sector_theta: 0.0,
            sector_rho: PI,
            transport: None,
            classical: ClassicalConfig {
                resolution: 243,
                t_max: 5,
                transfer_k: None,
            },
            output_dir: PathBuf::from("out"),
            dimension_cap: crate::spectral::MAX_DENSE_EIGEN_DIMENSION,
            workers: 1,
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_scalar(key, s))
        .collect()
}

/// Comma list whose items may be inclusive ranges `a..b`.
fn parse_index_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = item.split_once("..") {
            let (a, b): (usize, usize) = (parse_scalar(key, a)?, parse_scalar(key, b)?);
            if a > b {
                return config_err(format!("{key}: empty range {item}"));
            }
            out.extend(a..=b);
        } else {
            out.push(parse_scalar(key, item)?);
        }
    }
    Ok(out)
}

fn parse_map_value<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr<Err = Error>,
{
    value
        .parse()
        .map_err(|e: Error| Error::Config(format!("{key}: {e}")))
}

/// Raw `key -> value` pairs with line numbers for error messages.
fn tokenize(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return config_err(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1));
        };
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return config_err(format!("line {}: duplicate key {key}", lineno + 1));
        }
    }
    Ok(map)
}

const KNOWN_KEYS: &[&str] = &[
    "map.family",
    "map.base",
    "map.kept",
    "dims.list",
    "dims.start",
    "dims.k_max",
    "spectrum.parity",
    "spectrum.radii",
    "spectrum.mu",
    "sector.theta",
    "sector.rho",
    "transport.k",
    "transport.theta",
    "transport.theta_count",
    "transport.method",
    "transport.tol",
    "classical.resolution",
    "classical.t_max",
    "classical.transfer_k",
    "output.dir",
    "run.dimension_cap",
    "run.workers",
];

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for key in kv.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return config_err(format!("unknown key {key}"));
            }
        }
        let get = |k: &str| kv.get(k).map(String::as_str);

        if let Some(v) = get("map.family") {
            self.family = parse_map_value("map.family", v)?;
        }
        let base: usize = match get("map.base") {
            Some(v) => parse_scalar("map.base", v)?,
            None if self.family == MapFamily::ToyDiagonal => 3,
            None => self.spec.base(),
        };
        let kept: Vec<usize> = match get("map.kept") {
            Some(v) => parse_list("map.kept", v)?,
            None if base == 3 => OpenBakerSpec::three_baker().kept().to_vec(),
            None if base == 5 => OpenBakerSpec::five_baker().kept().to_vec(),
            None => (0..base).collect(),
        };
        self.spec = OpenBakerSpec::new(base, kept).map_err(|e| Error::Config(format!("map: {e}")))?;

        match (get("dims.list"), get("dims.start"), get("dims.k_max")) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return config_err("dims.list cannot be combined with dims.start/dims.k_max")
            }
            (Some(v), None, None) => self.dims = parse_index_list("dims.list", v)?,
            (None, Some(s), Some(k)) => {
                let start: usize = parse_scalar("dims.start", s)?;
                let k_max: u32 = parse_scalar("dims.k_max", k)?;
                self.dims = (0..=k_max)
                    .map(|k| {
                        base.checked_pow(k)
                            .and_then(|p| p.checked_mul(start))
                            .ok_or_else(|| Error::Config("dims: geometric sequence overflows".into()))
                    })
                    .collect::<Result<_>>()?;
            }
            (None, Some(_), None) | (None, None, Some(_)) => {
                return config_err("dims.start and dims.k_max must be given together")
            }
            (None, None, None) => {}
        }
        if let Some(v) = get("spectrum.parity") {
            self.parity = parse_map_value("spectrum.parity", v)?;
        }
        if let Some(v) = get("spectrum.radii") {
            self.radii = parse_list("spectrum.radii", v)?;
            validate_radii(&self.radii).map_err(|e| Error::Config(format!("spectrum.radii: {e}")))?;
        }
        if let Some(v) = get("spectrum.mu") {
            self.mu = Some(parse_scalar("spectrum.mu", v)?);
        }
        if let Some(v) = get("sector.theta") {
            self.sector_theta = parse_scalar("sector.theta", v)?;
        }
        if let Some(v) = get("sector.rho") {
            self.sector_rho = parse_scalar("sector.rho", v)?;
        }
        SectorQuery::new(0.0, self.sector_theta, self.sector_rho).map_err(|e| Error::Config(format!("sector: {e}")))?;

        let transport_keys = ["transport.theta", "transport.theta_count", "transport.method", "transport.tol"];
        match get("transport.k") {
            Some(v) => {
                let ks = parse_index_list("transport.k", v)?;
                if ks.is_empty() || ks.contains(&0) {
                    return config_err("transport.k must list lengths k >= 1");
                }
                let thetas = match (get("transport.theta"), get("transport.theta_count")) {
                    (Some(_), Some(_)) => return config_err("give transport.theta or transport.theta_count, not both"),
                    (Some(t), None) => parse_list("transport.theta", t)?,
                    (None, Some(m)) => {
                        let m: usize = parse_scalar("transport.theta_count", m)?;
                        if m == 0 {
                            return config_err("transport.theta_count must be positive");
                        }
                        theta_grid(m)
                    }
                    (None, None) => vec![0.0],
                };
                if thetas.is_empty() || thetas.iter().any(|t| !t.is_finite()) {
                    return config_err("transport.theta must list finite angles");
                }
                let method = match get("transport.method") {
                    Some(m) => parse_map_value("transport.method", m)?,
                    None => TransmissionMethod::Resolvent,
                };
                let tol: f64 = match get("transport.tol") {
                    Some(t) => parse_scalar("transport.tol", t)?,
                    None => 1e-12,
                };
                if !(tol > 0.0) {
                    return config_err("transport.tol must be positive");
                }
                self.transport = Some(TransportConfig { ks, thetas, method, tol });
            }
            None => {
                if let Some(k) = transport_keys.iter().find(|k| kv.contains_key(**k)) {
                    return config_err(format!("{k} given without transport.k"));
                }
            }
        }

        if let Some(v) = get("classical.resolution") {
            self.classical.resolution = parse_scalar("classical.resolution", v)?;
            if self.classical.resolution == 0 {
                return config_err("classical.resolution must be positive");
            }
        }
        if let Some(v) = get("classical.t_max") {
            self.classical.t_max = parse_scalar("classical.t_max", v)?;
        }
        if let Some(v) = get("classical.transfer_k") {
            let k: usize = parse_scalar("classical.transfer_k", v)?;
            if k == 0 {
                return config_err("classical.transfer_k must be positive");
            }
            self.classical.transfer_k = Some(k);
        }
        if let Some(v) = get("output.dir") {
            self.output_dir = PathBuf::from(v);
        }
        if let Some(v) = get("run.dimension_cap") {
            self.dimension_cap = parse_scalar("run.dimension_cap", v)?;
        }
        if let Some(v) = get("run.workers") {
            self.workers = parse_scalar("run.workers", v)?;
            if self.workers == 0 {
                return config_err("run.workers must be positive");
            }
        }
        Ok(())
    }

    /// Map identifiers for every configured dimension; the first invalid one is an error.
    pub fn map_ids(&self) -> Vec<(usize, Result<QuantumMapId>)> {
        self.dims
            .iter()
            .map(|&n| (n, QuantumMapId::new(self.family, self.spec.clone(), n)))
            .collect()
    }

    /// Rescaling exponent: configured, or `log s / log D`.
    pub fn effective_mu(&self) -> f64 {
        self.mu
            .unwrap_or_else(|| (self.spec.kept_count() as f64).ln() / (self.spec.base() as f64).ln())
    }
}

impl FromStr for RunConfig {
    type Err = Error;
    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply(&tokenize(text)?)?;
        Ok(cfg)
    }
}
