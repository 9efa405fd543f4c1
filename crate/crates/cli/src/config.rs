//! JSON run configuration.
//!
//! Complex matrices are nested arrays of `[re, im]` pairs, row by row:
//!
//! ```json
//! "h_s": [[[0.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [-0.5, 0.0]]]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sln_me::bath::{discretize_spectral_density, BathSpectrum, Beta, Discretization, SpectralFamily};
use sln_me::hierarchy::{Pairing, Thresholds};
use sln_me::liouville::SystemModel;
use sln_me::reference::OracleConfig;
use sln_me::{CMatrix, Complex64, TimeGrid};

use crate::CliError;

pub type ComplexMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SolverName {
    Sln,
    SlnPair,
    Hierarchy1,
    Hierarchy2,
    Convolved,
    Tcl2,
    Lindblad,
    Oracle,
}

impl SolverName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverName::Sln => "sln",
            SolverName::SlnPair => "sln-pair",
            SolverName::Hierarchy1 => "hierarchy1",
            SolverName::Hierarchy2 => "hierarchy2",
            SolverName::Convolved => "convolved",
            SolverName::Tcl2 => "tcl2",
            SolverName::Lindblad => "lindblad",
            SolverName::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PairingName {
    #[default]
    Tied,
    Independent,
}

impl From<PairingName> for Pairing {
    fn from(p: PairingName) -> Self {
        match p {
            PairingName::Tied => Pairing::Tied,
            PairingName::Independent => Pairing::Independent,
        }
    }
}

/// Inverse temperature: a positive number or `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Temperature {
    Value(f64),
    Named(String),
}

impl Temperature {
    fn resolve(&self, key: &str) -> Result<Beta, CliError> {
        match self {
            Temperature::Value(b) => Beta::new(*b).map_err(|e| CliError::key(key, e.to_string())),
            Temperature::Named(s) if s == "inf" || s == "infinity" => Ok(Beta::Infinite),
            Temperature::Named(s) => Err(CliError::key(key, format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub omega: f64,
    pub g_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BathConfig {
    Modes {
        modes: Vec<ModeEntry>,
        beta: Temperature,
    },
    Ohmic {
        eta: f64,
        omega_c: f64,
        n_modes: usize,
        omega_max: f64,
        beta: Temperature,
    },
    SuperOhmic {
        eta: f64,
        s: f64,
        omega_c: f64,
        n_modes: usize,
        omega_max: f64,
        beta: Temperature,
    },
    /// Classical exponential kernel `(Γ/τ_c)e^{−τ/τ_c}`; memory solvers and
    /// `lindblad` (with rate `Γ`) only.
    Exponential {
        gamma: f64,
        tau_c: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub h_s: ComplexMatrix,
    pub x: ComplexMatrix,
    pub rho0: ComplexMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dt: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    #[serde(default = "default_valid_below")]
    pub valid_below: f64,
    #[serde(default = "default_invalid_above")]
    pub invalid_above: f64,
}

fn default_valid_below() -> f64 {
    Thresholds::default().valid_below
}

fn default_invalid_above() -> f64 {
    Thresholds::default().invalid_above
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { valid_below: default_valid_below(), invalid_above: default_invalid_above() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default = "default_cutoff")]
    pub fock_cutoff: usize,
    #[serde(default = "default_true")]
    pub check_convergence: bool,
    #[serde(default = "default_oracle_tolerance")]
    pub tolerance: f64,
}

fn default_cutoff() -> usize {
    OracleConfig::default().fock_cutoff
}

fn default_true() -> bool {
    true
}

fn default_oracle_tolerance() -> f64 {
    OracleConfig::default().tolerance
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { fock_cutoff: default_cutoff(), check_convergence: true, tolerance: default_oracle_tolerance() }
    }
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub bath: BathConfig,
    pub grid: GridConfig,
    pub solver: SolverName,
    #[serde(default)]
    pub trajectories: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub pairing: PairingName,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub oracle: OracleSection,
}

impl RunConfig {
    /// Parses a config document. A `summary.json` written by a previous run is
    /// accepted too; its embedded `config` is used.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::key("", e.to_string()))?;
        let value = match value {
            serde_json::Value::Object(mut map) if map.contains_key("config") && !map.contains_key("solver") => {
                map.remove("config").unwrap()
            }
            other => other,
        };
        serde_path_to_error::deserialize(value).map_err(|e| {
            let key = e.path().to_string();
            CliError::key(if key == "." { "" } else { &key }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::from_t_max(self.grid.dt, self.grid.t_max).map_err(|e| CliError::key("grid", e.to_string()))
    }

    pub fn model(&self) -> Result<SystemModel, CliError> {
        let h = parse_matrix(&self.model.h_s, "model.h_s")?;
        let x = parse_matrix(&self.model.x, "model.x")?;
        let rho0 = parse_matrix(&self.model.rho0, "model.rho0")?;
        if x.nrows() != h.nrows() {
            return Err(CliError::key("model.x", format!("dimension {} differs from h_s ({})", x.nrows(), h.nrows())));
        }
        if rho0.nrows() != h.nrows() {
            return Err(CliError::key(
                "model.rho0",
                format!("dimension {} differs from h_s ({})", rho0.nrows(), h.nrows()),
            ));
        }
        SystemModel::new(h, x, rho0).map_err(|e| CliError::key("model", e.to_string()))
    }

    /// Mode spectrum of the bath; `None` for the exponential kernel.
    pub fn spectrum(&self) -> Result<Option<BathSpectrum>, CliError> {
        let t_max = Some(self.grid.t_max);
        let discretization = match &self.bath {
            BathConfig::Exponential { .. } => return Ok(None),
            BathConfig::Modes { modes, beta } => Discretization {
                family: SpectralFamily::Table(modes.iter().map(|m| (m.omega, m.g_hat)).collect()),
                n_modes: modes.len(),
                omega_max: 0.0,
                beta: beta.resolve("bath.beta")?,
                t_max,
            },
            BathConfig::Ohmic { eta, omega_c, n_modes, omega_max, beta } => Discretization {
                family: SpectralFamily::Ohmic { eta: *eta, omega_c: *omega_c },
                n_modes: *n_modes,
                omega_max: *omega_max,
                beta: beta.resolve("bath.beta")?,
                t_max,
            },
            BathConfig::SuperOhmic { eta, s, omega_c, n_modes, omega_max, beta } => Discretization {
                family: SpectralFamily::SuperOhmic { eta: *eta, s: *s, omega_c: *omega_c },
                n_modes: *n_modes,
                omega_max: *omega_max,
                beta: beta.resolve("bath.beta")?,
                t_max,
            },
        };
        discretize_spectral_density(&discretization).map(Some).map_err(|e| CliError::key("bath", e.to_string()))
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds { valid_below: self.thresholds.valid_below, invalid_above: self.thresholds.invalid_above }
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            fock_cutoff: self.oracle.fock_cutoff,
            check_convergence: self.oracle.check_convergence,
            tolerance: self.oracle.tolerance,
        }
    }

    /// Cross-key checks that depend on the chosen solver.
    pub fn validate(&self) -> Result<(), CliError> {
        let grid = self.grid()?;
        self.spectrum()?;
        if self.stride == 0 || grid.n % self.stride != 0 {
            return Err(CliError::key(
                "stride",
                format!("stride {} must be >= 1 and divide the {} grid steps", self.stride, grid.n),
            ));
        }
        let exponential = matches!(self.bath, BathConfig::Exponential { .. });
        match self.solver {
            SolverName::Sln | SolverName::SlnPair => {
                if exponential {
                    return Err(CliError::key("bath.kind", "stochastic solvers need a mode spectrum"));
                }
                match self.trajectories {
                    None => return Err(CliError::key("trajectories", "required for sln solvers")),
                    Some(0) => return Err(CliError::key("trajectories", "must be >= 1")),
                    _ => {}
                }
            }
            SolverName::Oracle if exponential => {
                return Err(CliError::key("bath.kind", "the oracle needs explicit modes"));
            }
            SolverName::Lindblad if !exponential => {
                return Err(CliError::key("bath.kind", "lindblad needs an exponential kernel (its rate gamma)"));
            }
            _ => {}
        }
        if let BathConfig::Exponential { gamma, tau_c } = self.bath {
            if !(gamma >= 0.0) {
                return Err(CliError::key("bath.gamma", format!("must be >= 0, got {gamma}")));
            }
            if !(tau_c > 0.0) {
                return Err(CliError::key("bath.tau_c", format!("must be > 0, got {tau_c}")));
            }
        }
        if !(self.thresholds.valid_below <= self.thresholds.invalid_above) {
            return Err(CliError::key("thresholds", "valid_below must not exceed invalid_above"));
        }
        Ok(())
    }
}

pub fn parse_matrix(rows: &ComplexMatrix, key: &str) -> Result<CMatrix, CliError> {
    let n = rows.len();
    if n == 0 {
        return Err(CliError::key(key, "empty matrix"));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != n) {
        return Err(CliError::key(key, format!("row {bad} has {} entries, expected {n}", rows[bad].len())));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
}

pub fn matrix_to_json(m: &CMatrix) -> ComplexMatrix {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}
