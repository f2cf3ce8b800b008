//! Experiment configuration read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{jakes_rho, DEFAULT_NAKAGAMI_M};
use crate::error::{PrecodingError, Result};
use crate::fp::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::network::monte_carlo::DEFAULT_BLOCKS;
use crate::network::topology::{DEFAULT_CELL_RADIUS_M, DEFAULT_SHADOWING_STD_DB};
use crate::network::Dims;

pub const DEFAULT_POWER_DBM: f64 = 30.0;
pub const DEFAULT_SIGMA2_DBM: f64 = -90.0;
pub const DEFAULT_RHO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    SingleCell,
    SevenCell,
}

impl Layout {
    pub fn cells(self) -> usize {
        match self {
            Layout::SingleCell => 1,
            Layout::SevenCell => 7,
        }
    }

    /// `(M_t, K, M_r)` at desk scale or at the scale of the published runs.
    pub fn default_dims(self, paper_scale: bool) -> (usize, usize, usize) {
        match (self, paper_scale) {
            (Layout::SingleCell, false) => (16, 8, 2),
            (Layout::SevenCell, false) => (8, 4, 2),
            (Layout::SingleCell, true) => (64, 32, 2),
            (Layout::SevenCell, true) => (32, 16, 2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Gaussian,
    Nakagami,
}

/// Solver names as they appear in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Fp,
    FastFp,
    WmmseStatic,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Fp, Algorithm::FastFp, Algorithm::WmmseStatic];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fp => "fp",
            Algorithm::FastFp => "fast-fp",
            Algorithm::WmmseStatic => "wmmse-static",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = PrecodingError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| PrecodingError::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    #[serde(alias = "sigma2-dbm")]
    Sigma2Dbm,
    Rho,
    Mt,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Sigma2Dbm => "sigma2_dbm",
            SweepParam::Rho => "rho",
            SweepParam::Mt => "mt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub layout: Layout,
    pub family: Family,
    pub nakagami_m: f64,
    pub cell_radius_m: f64,
    pub shadowing_std_db: f64,
    /// Defaults to on for the seven-cell layout.
    pub wrap_around: Option<bool>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            layout: Layout::SingleCell,
            family: Family::Gaussian,
            nakagami_m: DEFAULT_NAKAGAMI_M,
            cell_radius_m: DEFAULT_CELL_RADIUS_M,
            shadowing_std_db: DEFAULT_SHADOWING_STD_DB,
            wrap_around: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub mt: Option<usize>,
    pub k: Option<usize>,
    pub mr: Option<usize>,
    pub power_dbm: f64,
    pub sigma2_dbm: f64,
    /// One weight per user; unit weights when absent.
    pub weights: Option<Vec<f64>>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            mt: None,
            k: None,
            mr: None,
            power_dbm: DEFAULT_POWER_DBM,
            sigma2_dbm: DEFAULT_SIGMA2_DBM,
            weights: None,
        }
    }
}

/// Temporal correlation, given directly or through Jakes' model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FadingSection {
    pub rho: Option<f64>,
    pub doppler_hz: Option<f64>,
    pub interval_s: Option<f64>,
}

impl FadingSection {
    pub fn resolve_rho(&self) -> Result<f64> {
        match (self.rho, self.doppler_hz, self.interval_s) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => Err(PrecodingError::Config(
                "give either rho or doppler_hz/interval_s, not both".into(),
            )),
            (Some(r), None, None) => Ok(r),
            (None, Some(fd), Some(t)) => {
                if !(fd >= 0.0 && t >= 0.0) {
                    return Err(PrecodingError::Config("Doppler and interval must be >= 0".into()));
                }
                Ok(jakes_rho(fd, t))
            }
            (None, None, None) => Ok(DEFAULT_RHO),
            _ => Err(PrecodingError::Config("doppler_hz and interval_s go together".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_blocks: usize,
    pub algorithms: Vec<Algorithm>,
    pub paper_scale: bool,
    /// Fill the `iter_time_ms` column; off by default so reports are reproducible byte for byte.
    pub record_timing: bool,
    pub output_dir: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub network: NetworkSection,
    pub fading: FadingSection,
    pub solver: SolverSection,
    pub sweep: Option<SweepSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            n_blocks: DEFAULT_BLOCKS,
            algorithms: Algorithm::ALL.to_vec(),
            paper_scale: false,
            record_timing: false,
            output_dir: None,
            scenario: ScenarioConfig::default(),
            network: NetworkSection::default(),
            fading: FadingSection::default(),
            solver: SolverSection::default(),
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| PrecodingError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PrecodingError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PrecodingError::Serialization(e.to_string()))
    }

    /// Base dimensions before any sweep over `M_t`.
    pub fn dims(&self) -> Dims {
        let (mt, k, mr) = self.scenario.layout.default_dims(self.paper_scale);
        Dims::new(
            self.scenario.layout.cells(),
            self.network.k.unwrap_or(k),
            self.network.mt.unwrap_or(mt),
            self.network.mr.unwrap_or(mr),
        )
    }

    pub fn wrap_around(&self) -> bool {
        self.scenario.wrap_around.unwrap_or(self.scenario.layout == Layout::SevenCell)
    }

    /// `(param, values)`; without a sweep section a single point at the configured noise power.
    pub fn sweep_points(&self) -> (SweepParam, Vec<f64>) {
        match &self.sweep {
            Some(s) => (s.param, s.values.clone()),
            None => (SweepParam::Sigma2Dbm, vec![self.network.sigma2_dbm]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks < 2 {
            return Err(PrecodingError::Config(format!("n_blocks must be >= 2, got {}", self.n_blocks)));
        }
        if self.algorithms.is_empty() {
            return Err(PrecodingError::Config("algorithm list is empty".into()));
        }
        if !(self.solver.tol >= 0.0 && self.solver.tol.is_finite()) {
            return Err(PrecodingError::Config(format!("solver tolerance must be >= 0, got {}", self.solver.tol)));
        }
        if !self.network.power_dbm.is_finite() || !self.network.sigma2_dbm.is_finite() {
            return Err(PrecodingError::Config("power levels must be finite".into()));
        }
        let rho = self.fading.resolve_rho()?;
        check_rho(rho)?;
        self.dims().validate()?;
        if let Some(w) = &self.network.weights {
            if w.len() != self.dims().users() {
                return Err(PrecodingError::Config(format!(
                    "expected {} weights, got {}",
                    self.dims().users(),
                    w.len()
                )));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(PrecodingError::Config("sweep values are empty".into()));
            }
            for &v in &s.values {
                match s.param {
                    SweepParam::Rho => check_rho(v)?,
                    SweepParam::Sigma2Dbm if !v.is_finite() => {
                        return Err(PrecodingError::Config(format!("noise power {v} dBm is not finite")))
                    }
                    SweepParam::Mt if !(v >= 1.0 && v.fract() == 0.0) => {
                        return Err(PrecodingError::Config(format!("antenna count {v} is not a positive integer")))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(PrecodingError::Config(format!("rho must lie in (0, 1], got {rho}")));
    }
    Ok(())
}
