//! Orchestration layer: configuration, check registry, report assembly.
//!
//! Every command produces a [`HarnessReport`] embedding the resolved
//! configuration and the crate version, serialized as JSON (or CSV rows of
//! the check table). Identical `(config, seed)` pairs produce identical
//! output bytes.

pub mod checks;
pub mod config;
pub mod verify;

pub use checks::{
    geometry_dump, run_generator_check, run_geometry_check, run_sde_check, Fault,
    GENERATOR_CHECK_NAMES, GEOMETRY_CHECK_NAMES, SDE_CHECK_NAMES,
};
pub use config::{OutputFormat, QuerySpec, RunConfig, SweepSpec, SCHEMA_VERSION};
pub use verify::{run_sweep, run_verify_relation, SweepOutput, SWEEP_CSV_HEADER};

use serde::Serialize;
use thiserror::Error;

use crate::kernels::{KernelError, KernelReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl HarnessError {
    /// Process exit code classification: configuration and I/O problems are
    /// code 2; check failures are reported through the pass flag (code 1).
    pub fn exit_code(&self) -> u8 {
        2
    }
}

/// One registered check: name, outcome, measured residual against its pinned
/// tolerance, and wall time.
#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub pass: bool,
    pub residual: f64,
    pub tolerance: f64,
    pub wall_time_s: f64,
}

pub fn checks_pass(checks: &[CheckSummary]) -> bool {
    checks.iter().all(|c| c.pass)
}

/// Top-level report written by every command.
#[derive(Debug, Serialize)]
pub struct HarnessReport<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub pass: bool,
    pub checks: &'a [CheckSummary],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_report: Option<&'a KernelReport>,
    pub config: &'a RunConfig,
}

pub fn crate_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Render a report in the requested format. CSV mode emits the check table;
/// JSON mode emits the full document.
pub fn render_report(report: &HarnessReport, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("serializable report");
            s.push('\n');
            s
        }
        OutputFormat::Csv => {
            let mut s = String::from("name,pass,residual,tolerance,wall_time_s\n");
            for c in report.checks {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    c.name,
                    u8::from(c.pass),
                    c.residual,
                    c.tolerance,
                    c.wall_time_s
                ));
            }
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_serialization_is_deterministic() {
        let cfg = RunConfig::default();
        let checks = vec![CheckSummary {
            name: "x".into(),
            pass: true,
            residual: 1e-13,
            tolerance: 1e-12,
            wall_time_s: 0.0,
        }];
        let r = HarnessReport {
            command: "geometry-check",
            version: crate_version(),
            pass: true,
            checks: &checks,
            kernel_report: None,
            config: &cfg,
        };
        let a = render_report(&r, OutputFormat::Json);
        let b = render_report(&r, OutputFormat::Json);
        assert_eq!(a, b);
        assert!(a.contains("\"schema_version\": 1"));
        let csv = render_report(&r, OutputFormat::Csv);
        assert!(csv.starts_with("name,pass,residual,tolerance,wall_time_s\n"));
    }
}
