//! Flat `key=value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::assembly::Affine;
use crate::coeff::CoeffKind;

#[derive(Debug, Error)]
#[error("config key `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSpec {
    pub kind: CoeffKind,
    pub seed: u64,
    pub eps: f64,
    pub blocks: usize,
    pub lo: f64,
    pub hi: f64,
    pub path: Option<PathBuf>,
}

impl Default for CoeffSpec {
    fn default() -> Self {
        Self {
            kind: CoeffKind::Identity,
            seed: 1,
            eps: 0.025,
            blocks: 40,
            lo: 1.0,
            hi: 1350.0,
            path: None,
        }
    }
}

/// Desired state: a constant or nodal values read from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Constant(f64),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Coarse mesh size; the control mesh follows the coarse mesh unless fixed.
    H,
    /// Control mesh size at fixed coarse mesh.
    Rho,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepParam::H => write!(f, "H"),
            SweepParam::Rho => write!(f, "rho"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    /// Subdivision counts `1/H` or `1/rho`.
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub nh: usize,
    /// `None` solves on the fine space.
    pub n_coarse: Option<usize>,
    /// Defaults to the coarse mesh, or the fine mesh for fine solves.
    pub n_control: Option<usize>,
    pub k: Option<usize>,
    pub j: f64,
    pub gamma: f64,
    pub coeff: CoeffSpec,
    pub y_d: TargetSpec,
    pub phi1: Affine,
    pub phi2: Affine,
    pub tol: f64,
    pub max_iter: usize,
    pub output_dir: PathBuf,
    pub basis_cache: Option<PathBuf>,
    pub rebuild_basis: bool,
    /// Also solve on the fine space and report errors against it.
    pub compare_fine: bool,
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            nh: 64,
            n_coarse: None,
            n_control: None,
            k: None,
            j: 3.0,
            gamma: 1.0,
            coeff: CoeffSpec::default(),
            y_d: TargetSpec::Constant(1.0),
            phi1: Affine::constant(-1.0),
            phi2: Affine::constant(1.0),
            tol: 1e-10,
            max_iter: 50,
            output_dir: PathBuf::from("out"),
            basis_cache: None,
            rebuild_basis: false,
            compare_fine: false,
            sweep: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::new(key, format!("cannot parse `{value}`")))
}

fn parse_affine(key: &str, value: &str) -> Result<Affine, ConfigError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(ConfigError::new(key, "expected three comma-separated numbers c0,c1,c2"));
    }
    Ok(Affine::new(
        parse_num(key, parts[0])?,
        parse_num(key, parts[1])?,
        parse_num(key, parts[2])?,
    ))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::new(key, format!("expected true/false, got `{value}`"))),
    }
}

fn parse_optional_count(key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
    if value == "none" || value == "fine" {
        Ok(None)
    } else {
        Ok(Some(parse_num(key, value)?))
    }
}

impl ExperimentConfig {
    /// Sets one dotted key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "mesh.nh" => self.nh = parse_num(key, value)?,
            "mesh.nH" => self.n_coarse = parse_optional_count(key, value)?,
            "mesh.nrho" => self.n_control = parse_optional_count(key, value)?,
            "lod.k" => self.k = parse_optional_count(key, value)?,
            "lod.j" => self.j = parse_num(key, value)?,
            "ocp.gamma" => self.gamma = parse_num(key, value)?,
            "ocp.y_d" => {
                self.y_d = match value.parse::<f64>() {
                    Ok(c) => TargetSpec::Constant(c),
                    Err(_) => TargetSpec::File(PathBuf::from(value)),
                }
            }
            "ocp.phi1" => self.phi1 = parse_affine(key, value)?,
            "ocp.phi2" => self.phi2 = parse_affine(key, value)?,
            "coeff.kind" => {
                self.coeff.kind = match value {
                    "identity" => CoeffKind::Identity,
                    "heterogeneous" => CoeffKind::Heterogeneous,
                    "oscillatory" => CoeffKind::Oscillatory,
                    "file" => CoeffKind::File,
                    _ => return Err(ConfigError::new(key, format!("unknown kind `{value}`"))),
                }
            }
            "coeff.seed" => self.coeff.seed = parse_num(key, value)?,
            "coeff.eps" => self.coeff.eps = parse_num(key, value)?,
            "coeff.blocks" => self.coeff.blocks = parse_num(key, value)?,
            "coeff.lo" => self.coeff.lo = parse_num(key, value)?,
            "coeff.hi" => self.coeff.hi = parse_num(key, value)?,
            "coeff.path" => self.coeff.path = Some(PathBuf::from(value)),
            "solver.tol" => self.tol = parse_num(key, value)?,
            "solver.max_iter" => self.max_iter = parse_num(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            "basis.cache" => self.basis_cache = Some(PathBuf::from(value)),
            "basis.rebuild" => self.rebuild_basis = parse_bool(key, value)?,
            "run.compare_fine" => self.compare_fine = parse_bool(key, value)?,
            "sweep.param" => {
                let param = match value {
                    "H" | "h" | "coarse" => SweepParam::H,
                    "rho" => SweepParam::Rho,
                    _ => return Err(ConfigError::new(key, "expected H or rho")),
                };
                self.sweep.get_or_insert(SweepSpec {
                    param,
                    values: Vec::new(),
                });
                if let Some(s) = self.sweep.as_mut() {
                    s.param = param;
                }
            }
            "sweep.values" => {
                let values = value
                    .split(',')
                    .map(|v| parse_num(key, v.trim()))
                    .collect::<Result<Vec<usize>, _>>()?;
                match self.sweep.as_mut() {
                    Some(s) => s.values = values,
                    None => {
                        self.sweep = Some(SweepSpec {
                            param: SweepParam::H,
                            values,
                        })
                    }
                }
            }
            _ => return Err(ConfigError::new(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(&format!("line {}", lineno + 1), "expected key=value"))?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Control mesh resolution actually used.
    pub fn control_resolution(&self) -> usize {
        self.n_control.or(self.n_coarse).unwrap_or(self.nh)
    }

    /// Corrector iterations: explicit `k`, else `ceil(j ln(1/H))`.
    pub fn corrector_steps(&self) -> Option<(usize, Option<u32>)> {
        let nc = self.n_coarse?;
        Some(match self.k {
            Some(k) => (k, None),
            None => (crate::lod::k_from_j(nc, self.j), Some(self.j.round() as u32)),
        })
    }

    /// Checks resolutions, parameters and bound ordering on the control mesh.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nh < 2 {
            return Err(ConfigError::new("mesh.nh", "must be at least 2"));
        }
        if let Some(nc) = self.n_coarse {
            if nc < 2 || self.nh % nc != 0 {
                return Err(ConfigError::new("mesh.nH", format!("{nc} must be >= 2 and divide mesh.nh = {}", self.nh)));
            }
        }
        let nr = self.control_resolution();
        if nr == 0 || self.nh % nr != 0 {
            return Err(ConfigError::new("mesh.nrho", format!("{nr} must divide mesh.nh = {}", self.nh)));
        }
        if self.k == Some(0) {
            return Err(ConfigError::new("lod.k", "must be at least 1"));
        }
        if !(self.j > 0.0) {
            return Err(ConfigError::new("lod.j", "must be positive"));
        }
        if !(self.gamma > 0.0) {
            return Err(ConfigError::new("ocp.gamma", "must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(ConfigError::new("solver.tol", "must be positive"));
        }
        match self.coeff.kind {
            CoeffKind::Heterogeneous => {
                if self.coeff.blocks == 0 || self.nh % self.coeff.blocks != 0 {
                    return Err(ConfigError::new("coeff.blocks", format!("{} must divide mesh.nh = {}", self.coeff.blocks, self.nh)));
                }
                if !(self.coeff.lo > 0.0) || self.coeff.hi < self.coeff.lo {
                    return Err(ConfigError::new("coeff.lo", "need 0 < lo <= hi"));
                }
            }
            CoeffKind::Oscillatory => {
                if !(self.coeff.eps > 0.0) {
                    return Err(ConfigError::new("coeff.eps", "must be positive"));
                }
            }
            CoeffKind::File => {
                if self.coeff.path.is_none() {
                    return Err(ConfigError::new("coeff.path", "required for kind=file"));
                }
            }
            CoeffKind::Identity => {}
        }
        let h = 1.0 / nr as f64;
        for cy in 0..nr {
            for cx in 0..nr {
                let (x1, x2) = ((cx as f64 + 0.5) * h, (cy as f64 + 0.5) * h);
                if self.phi1.eval(x1, x2) > self.phi2.eval(x1, x2) {
                    return Err(ConfigError::new("ocp.phi1", format!("exceeds ocp.phi2 in control cell ({cx}, {cy})")));
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(ConfigError::new("sweep.values", "empty list"));
            }
            for &v in &s.values {
                if v < 1 || self.nh % v != 0 {
                    return Err(ConfigError::new("sweep.values", format!("{v} must divide mesh.nh = {}", self.nh)));
                }
                if s.param == SweepParam::H && v < 2 {
                    return Err(ConfigError::new("sweep.values", "coarse meshes need at least 2 subdivisions"));
                }
            }
            if s.param == SweepParam::Rho && self.n_coarse.is_none() {
                return Err(ConfigError::new("mesh.nH", "a rho sweep needs a coarse mesh"));
            }
        }
        Ok(())
    }

    /// Oscillatory benchmark (y_d = -1, affine bounds) on an `nh` mesh.
    pub fn oscillatory_example(nh: usize) -> Self {
        Self {
            nh,
            coeff: CoeffSpec {
                kind: CoeffKind::Oscillatory,
                eps: 0.025,
                ..CoeffSpec::default()
            },
            y_d: TargetSpec::Constant(-1.0),
            phi1: Affine::new(-0.005, -0.01, 0.0),
            phi2: Affine::new(-0.005, 0.0, 0.0007),
            ..Self::default()
        }
    }

    /// Heterogeneous benchmark (y_d = 1, affine bounds) on an `nh` mesh.
    pub fn heterogeneous_example(nh: usize, seed: u64, blocks: usize) -> Self {
        Self {
            nh,
            coeff: CoeffSpec {
                kind: CoeffKind::Heterogeneous,
                seed,
                blocks,
                lo: 1.0,
                hi: 1350.0,
                ..CoeffSpec::default()
            },
            y_d: TargetSpec::Constant(1.0),
            phi1: Affine::new(-0.0001, 0.0002, 0.0),
            phi2: Affine::new(0.0001, 0.0, 0.0002),
            ..Self::default()
        }
    }
}
