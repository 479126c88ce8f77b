//! Campaign configuration (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spde_mlmc::darcy::{DarcyOptions, DarcyPreconditioner};
use spde_mlmc::linalg::{PreconditionerKind, SolverOptions, DEFAULT_ATOL, DEFAULT_RTOL};
use spde_mlmc::mesh::{build_cartesian_mesh, CartesianMesh};
use spde_mlmc::mlmc::{CostModel, MlmcConfig};
use spde_mlmc::sampler::{MaternParams, Padding, SamplerOptions};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub mesh: MeshConfig,
    pub field: FieldConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub darcy: DarcyConfig,
    #[serde(default)]
    pub mlmc: MlmcSection,
    #[serde(default)]
    pub covariance: CovarianceConfig,
    /// Not serialized: output headers must not depend on where files go.
    #[serde(default, skip_serializing)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub dim: usize,
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
    pub extents: Vec<f64>,
    /// Cells per axis of the coarsest physical mesh.
    pub cells: Vec<usize>,
    /// Number of levels; level 0 is the finest.
    #[serde(default = "one")]
    pub levels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PaddingKind {
    None,
    #[default]
    CorrelationLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub nu: f64,
    #[serde(default)]
    pub correlation_length: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default = "unit")]
    pub sigma2: f64,
    #[serde(default)]
    pub padding: PaddingKind,
    /// Explicit padding length per axis; overrides `padding`.
    #[serde(default)]
    pub padding_length: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PreconditionerName {
    None,
    Jacobi,
    #[default]
    Sgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub preconditioner: PreconditionerName,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            max_iter: default_max_iter(),
            preconditioner: PreconditionerName::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DumpFormat {
    #[default]
    Csv,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub level: usize,
    /// Also write the coupled coarse field of every sample.
    #[serde(default)]
    pub pair: bool,
    #[serde(default)]
    pub format: DumpFormat,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            seed: 0,
            samples: default_samples(),
            level: 0,
            pair: false,
            format: DumpFormat::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarcyConfig {
    /// Defaults to the last axis.
    #[serde(default)]
    pub flow_axis: Option<usize>,
    #[serde(default = "default_darcy_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "yes")]
    pub block_preconditioner: bool,
    /// Permeability file; the first 60×220 values form the mean log field.
    #[serde(default)]
    pub spe10_path: Option<PathBuf>,
}

impl Default for DarcyConfig {
    fn default() -> Self {
        DarcyConfig {
            flow_axis: None,
            rtol: default_darcy_rtol(),
            atol: default_atol(),
            max_iter: default_max_iter(),
            block_preconditioner: true,
            spe10_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CostModelName {
    #[default]
    Dofs,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlmcSection {
    /// Target mean square error ε².
    #[serde(default = "default_eps2")]
    pub eps2: f64,
    #[serde(default = "half")]
    pub split: f64,
    #[serde(default = "default_pilot")]
    pub pilot: usize,
    #[serde(default = "two")]
    pub min_samples: usize,
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    #[serde(default)]
    pub cost_model: CostModelName,
    #[serde(default = "default_seconds_per_dof")]
    pub seconds_per_dof: f64,
    #[serde(default)]
    pub failure_budget: usize,
    /// Single-level Monte Carlo samples on the finest level for comparison.
    #[serde(default)]
    pub reference_samples: usize,
}

impl Default for MlmcSection {
    fn default() -> Self {
        MlmcSection {
            eps2: default_eps2(),
            split: 0.5,
            pilot: default_pilot(),
            min_samples: 2,
            max_samples: default_max_samples(),
            max_rounds: default_rounds(),
            cost_model: CostModelName::Dofs,
            seconds_per_dof: default_seconds_per_dof(),
            failure_budget: 0,
            reference_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceConfig {
    #[serde(default = "default_cov_samples")]
    pub samples: usize,
    /// Number of KL modes; all by default.
    #[serde(default)]
    pub truncation: Option<usize>,
    #[serde(default = "default_guard")]
    pub guard: usize,
    #[serde(default)]
    pub export_basis: bool,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        CovarianceConfig {
            samples: default_cov_samples(),
            truncation: None,
            guard: default_guard(),
            export_basis: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out() }
    }
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn unit() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}
fn default_rtol() -> f64 {
    DEFAULT_RTOL
}
fn default_atol() -> f64 {
    DEFAULT_ATOL
}
fn default_darcy_rtol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    10_000
}
fn default_samples() -> usize {
    1
}
fn default_eps2() -> f64 {
    1e-3
}
fn default_pilot() -> usize {
    50
}
fn default_max_samples() -> usize {
    1_000_000
}
fn default_rounds() -> usize {
    20
}
fn default_seconds_per_dof() -> f64 {
    1e-6
}
fn default_cov_samples() -> usize {
    5000
}
fn default_guard() -> usize {
    spde_mlmc::kl::DENSE_GUARD
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Resolved configuration as TOML, embedded in every output header.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.mesh;
        if !(m.dim == 2 || m.dim == 3) {
            return Err(CliError::Config(format!("mesh.dim must be 2 or 3, got {}", m.dim)));
        }
        if m.extents.len() != m.dim || m.cells.len() != m.dim {
            return Err(CliError::Config("mesh.extents and mesh.cells need one entry per axis".into()));
        }
        if m.origin.as_ref().is_some_and(|o| o.len() != m.dim) {
            return Err(CliError::Config("mesh.origin needs one entry per axis".into()));
        }
        for &e in &m.extents {
            positive("mesh.extents", e)?;
        }
        if m.cells.contains(&0) || m.levels == 0 {
            return Err(CliError::Config("mesh.cells and mesh.levels must be positive".into()));
        }
        let f = &self.field;
        positive("field.nu", f.nu)?;
        if !(f.sigma2 >= 0.0) || !f.sigma2.is_finite() {
            return Err(CliError::Config(format!("field.sigma2 must be non-negative, got {}", f.sigma2)));
        }
        match (f.correlation_length, f.kappa) {
            (Some(b), None) => positive("field.correlation_length", b)?,
            (None, Some(k)) => positive("field.kappa", k)?,
            _ => {
                return Err(CliError::Config(
                    "set exactly one of field.correlation_length and field.kappa".into(),
                ))
            }
        }
        if let Some(p) = &f.padding_length {
            if p.len() != m.dim || p.iter().any(|v| !(*v >= 0.0)) {
                return Err(CliError::Config("field.padding_length needs one non-negative entry per axis".into()));
            }
        }
        positive("solver.rtol", self.solver.rtol)?;
        positive("solver.atol", self.solver.atol)?;
        positive("darcy.rtol", self.darcy.rtol)?;
        positive("darcy.atol", self.darcy.atol)?;
        if self.darcy.flow_axis.is_some_and(|a| a >= m.dim) {
            return Err(CliError::Config("darcy.flow_axis out of range".into()));
        }
        if self.sampling.level >= m.levels {
            return Err(CliError::Config(format!(
                "sampling.level {} but only {} levels",
                self.sampling.level, m.levels
            )));
        }
        if self.sampling.pair && self.sampling.level + 1 >= m.levels {
            return Err(CliError::Config("sampling.pair needs a coarser level below sampling.level".into()));
        }
        positive("mlmc.eps2", self.mlmc.eps2)?;
        positive("mlmc.seconds_per_dof", self.mlmc.seconds_per_dof)?;
        self.mlmc_config(0).validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn coarsest_mesh(&self) -> Result<CartesianMesh, CliError> {
        let origin = self.mesh.origin.clone().unwrap_or_else(|| vec![0.0; self.mesh.dim]);
        build_cartesian_mesh(self.mesh.dim, &origin, &self.mesh.extents, &self.mesh.cells)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn matern(&self) -> Result<MaternParams, CliError> {
        let f = &self.field;
        let p = match (f.correlation_length, f.kappa) {
            (Some(b), _) => MaternParams::from_correlation_length(f.nu, b, f.sigma2, self.mesh.dim),
            (None, Some(k)) => MaternParams::new(f.nu, k, f.sigma2, self.mesh.dim),
            (None, None) => unreachable!("validated"),
        };
        p.map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn padding(&self) -> Padding {
        match (&self.field.padding_length, self.field.padding) {
            (Some(l), _) => Padding::Length(l.clone()),
            (None, PaddingKind::None) => Padding::None,
            (None, PaddingKind::CorrelationLength) => Padding::CorrelationLength,
        }
    }

    pub fn sampler_options(&self) -> SamplerOptions {
        SamplerOptions {
            solver: SolverOptions {
                rtol: self.solver.rtol,
                atol: self.solver.atol,
                max_iter: self.solver.max_iter,
            },
            preconditioner: match self.solver.preconditioner {
                PreconditionerName::None => PreconditionerKind::None,
                PreconditionerName::Jacobi => PreconditionerKind::Jacobi,
                PreconditionerName::Sgs => PreconditionerKind::SymmetricGaussSeidel,
            },
        }
    }

    pub fn darcy_options(&self) -> DarcyOptions {
        DarcyOptions {
            solver: SolverOptions {
                rtol: self.darcy.rtol,
                atol: self.darcy.atol,
                max_iter: self.darcy.max_iter,
            },
            preconditioner: if self.darcy.block_preconditioner {
                DarcyPreconditioner::BlockDiagonal
            } else {
                DarcyPreconditioner::None
            },
            ..Default::default()
        }
    }

    pub fn flow_axis(&self) -> usize {
        self.darcy.flow_axis.unwrap_or(self.mesh.dim - 1)
    }

    pub fn mlmc_config(&self, seed: u64) -> MlmcConfig {
        let s = &self.mlmc;
        MlmcConfig {
            eps2: s.eps2,
            split: s.split,
            pilot_samples: s.pilot,
            min_samples: s.min_samples,
            max_samples: s.max_samples,
            max_rounds: s.max_rounds,
            seed,
            cost_model: match s.cost_model {
                CostModelName::Dofs => CostModel::Dofs {
                    seconds_per_dof: s.seconds_per_dof,
                },
                CostModelName::Wall => CostModel::Wall,
            },
            failure_budget: s.failure_budget,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[mesh]
dim = 2
extents = [1.0, 1.0]
cells = [8, 8]

[field]
nu = 1.0
correlation_length = 0.1
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = Config::from_toml(MINIMAL).unwrap();
        assert_eq!(c.mesh.levels, 1);
        assert_eq!(c.field.sigma2, 1.0);
        assert_eq!(c.solver.rtol, 1e-6);
        assert_eq!(c.padding(), Padding::CorrelationLength);
        assert_eq!(c.flow_axis(), 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = format!("{MINIMAL}\n[solver]\nrtol = 1e-6\ntolerance = 3\n");
        assert!(matches!(Config::from_toml(&bad), Err(CliError::Config(_))));
        let bad = format!("{MINIMAL}\n[extras]\nx = 1\n");
        assert!(Config::from_toml(&bad).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for (from, to) in [
            ("nu = 1.0", "nu = -1.0"),
            ("dim = 2", "dim = 4"),
            ("cells = [8, 8]", "cells = [8, 0]"),
            ("correlation_length = 0.1", "correlation_length = 0.1\nkappa = 3.0"),
        ] {
            assert!(Config::from_toml(&MINIMAL.replace(from, to)).is_err(), "{to}");
        }
    }

    #[test]
    fn roundtrips_through_toml() {
        let c = Config::from_toml(MINIMAL).unwrap();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }
}
