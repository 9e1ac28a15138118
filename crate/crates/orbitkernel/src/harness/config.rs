//! Run configuration: one versioned JSON document, CLI flags override file
//! values, and every report embeds the fully resolved copy.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::geometry::BasePoint;
use crate::kernels::{BoxRegion, GridSpec, KernelQuery};
use crate::sde::SimParams;

use super::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Kernel comparison scenario as it appears in the config file; the shared
/// simulation parameters live under `sim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySpec {
    pub start: BasePoint,
    pub box_center: BasePoint,
    pub box_half_widths: [f64; 3],
    pub t_elapsed: f64,
    pub quad_points: u32,
}

impl Default for QuerySpec {
    fn default() -> Self {
        Self {
            start: BasePoint::new(1.0, 0.5, 0.0),
            box_center: BasePoint::new(1.2, 0.3, 0.2),
            box_half_widths: [0.15, 0.15, 0.15],
            t_elapsed: 0.5,
            quad_points: 256,
        }
    }
}

/// Sweep axes; the Cartesian product of the three lists is run row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub t_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub starts: Vec<BasePoint>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            t_values: vec![0.25, 0.5, 1.0],
            lambda_values: vec![1.0],
            starts: vec![BasePoint::new(1.0, 0.5, 0.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub sim: SimParams,
    pub query: QuerySpec,
    /// Central-difference step for the operator checks.
    pub fd_step: f64,
    pub grid: GridSpec,
    pub sweep: SweepSpec,
    /// Fault injection for negative controls, e.g. "flip-conn-f1".
    pub fault: Option<String>,
    pub output_path: Option<String>,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            sim: SimParams::default(),
            query: QuerySpec::default(),
            fd_step: 1e-4,
            grid: GridSpec::default(),
            sweep: SweepSpec::default(),
            fault: None,
            output_path: None,
            format: OutputFormat::Json,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("cannot parse {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.sim
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(1e-7..=1e-2).contains(&self.fd_step) {
            return Err(HarnessError::Config("fd_step outside [1e-7, 1e-2]".into()));
        }
        if let Some(f) = &self.fault {
            super::checks::Fault::parse(f)?;
        }
        Ok(())
    }

    /// Resolved kernel query for the verify/sweep commands.
    pub fn kernel_query(&self) -> KernelQuery {
        KernelQuery {
            start: self.query.start,
            box_region: BoxRegion {
                center: self.query.box_center,
                half_widths: self.query.box_half_widths,
            },
            t_elapsed: self.query.t_elapsed,
            quad_points: self.query.quad_points,
            params: self.sim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }

    #[test]
    fn schema_version_is_enforced() {
        let mut cfg = RunConfig::default();
        cfg.schema_version = 99;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_documents_take_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"sim": {"mu2kappa": 2.0, "mass_m": 1.0, "dt": 0.001,
                "t_total": 0.5, "eps_min": 1e-6, "seed": 7, "n_paths": 100,
                "potential": {"kind": "zero"}, "jacobian_enabled": true}}"#)
                .unwrap();
        assert_eq!(cfg.sim.mu2kappa, 2.0);
        assert_eq!(cfg.query, QuerySpec::default());
    }
}
