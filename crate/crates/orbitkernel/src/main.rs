//! `orbitkernel` CLI: reproducible verification runs for the reduced
//! diffusion and the heat-kernel identity.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error.
//! `ORBITKERNEL_THREADS` caps worker parallelism.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use orbitkernel::harness::{
    checks_pass, crate_version, render_report, run_generator_check, run_geometry_check,
    run_sde_check, run_sweep, run_verify_relation, CheckSummary, HarnessError, HarnessReport,
    OutputFormat, RunConfig,
};

#[derive(Parser)]
#[command(name = "orbitkernel", version, about = "Symmetry-reduced diffusion verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// Inject a named fault (negative controls), e.g. flip-conn-f1.
    #[arg(long, global = true)]
    fault: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form geometry identity suite at 1000 seeded points.
    GeometryCheck,
    /// Operator-level equivariance and drift checks.
    GeneratorCheck,
    /// Stochastic-law checks: moments, transport, reproducibility.
    SdeCheck,
    /// Monte-Carlo test of the kernel reduction identity.
    VerifyRelation,
    /// Cartesian sweep over horizon, diffusion scale, and start points.
    Sweep,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GeometryCheck => "geometry-check",
        Command::GeneratorCheck => "generator-check",
        Command::SdeCheck => "sde-check",
        Command::VerifyRelation => "verify-relation",
        Command::Sweep => "sweep",
    }
}

fn emit(cfg: &RunConfig, out: &Option<PathBuf>, text: &str) -> Result<(), HarnessError> {
    let target = out
        .clone()
        .or_else(|| cfg.output_path.as_ref().map(PathBuf::from));
    match target {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    if let Some(format) = cli.format {
        cfg.format = format;
    }
    if let Some(fault) = &cli.fault {
        cfg.fault = Some(fault.clone());
    }
    cfg.validate()?;

    if let Ok(threads) = std::env::var("ORBITKERNEL_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| HarnessError::Config("ORBITKERNEL_THREADS must be an integer".into()))?;
        // Ignore the error from a pool that is already initialized.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let name = command_name(&cli.command);
    let (checks, kernel_report): (Vec<CheckSummary>, Option<_>) = match cli.command {
        Command::GeometryCheck => (run_geometry_check(&cfg)?, None),
        Command::GeneratorCheck => (run_generator_check(&cfg)?, None),
        Command::SdeCheck => (run_sde_check(&cfg)?, None),
        Command::VerifyRelation => {
            let (report, summary) = run_verify_relation(&cfg)?;
            (vec![summary], Some(report))
        }
        Command::Sweep => {
            let sweep = run_sweep(&cfg)?;
            emit(&cfg, &cli.out, &sweep.csv)?;
            for (i, r) in sweep.reports.iter().enumerate() {
                eprintln!("scenario {i}: residual {:+.4e}, z {:+.3}", r.residual, r.z);
            }
            return Ok(sweep.pass);
        }
    };

    let pass = checks_pass(&checks);
    let report = HarnessReport {
        command: name,
        version: crate_version(),
        pass,
        checks: &checks,
        kernel_report: kernel_report.as_ref(),
        config: &cfg,
    };
    emit(&cfg, &cli.out, &render_report(&report, cfg.format))?;
    for c in &checks {
        eprintln!(
            "{:<32} {}  residual {:.3e} (tol {:.1e}, {:.2}s)",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.residual,
            c.tolerance,
            c.wall_time_s
        );
    }
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
