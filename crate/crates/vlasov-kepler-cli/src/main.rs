//! `vlasov-kepler`: Lagrangian marker simulator for a collisionless gas
//! scattering off an attractive point mass, in asymptotic action-angle
//! coordinates.
//!
//! Subcommands: `run` (simulate and report), `verify` (property battery),
//! `field-snapshot` (tabulate the field of a checkpoint), `scatter-report`
//! (recompute diagnostics from checkpoints). Exit codes: 0 success, 1
//! runtime/regime failure, 2 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vlasov_kepler_cli::config::RunConfig;
use vlasov_kepler_cli::io::{self, FieldRow};
use vlasov_kepler_cli::run::{evaluate_checks, execute, Failure, ReportDocument, RunOutcome};
use vlasov_kepler_cli::verify;
use vlasov_kepler_core::diagnostics::scattering_report;
use vlasov_kepler_core::field::{build_field_view, effective_force_at};

#[derive(Parser)]
#[command(
    name = "vlasov-kepler",
    version,
    about = "Deterministic marker simulator for radial gravitational scattering \
             around a point mass",
    long_about = "Simulates a weakly self-interacting, spherically symmetric \
                  collisionless gas on hyperbolic orbits around an attractive \
                  point mass, in asymptotic action-angle coordinates, and \
                  measures its long-time scattering behavior. All outputs are \
                  bit-reproducible for a given config on a given platform."
)]
struct Cli {
    /// Path to a JSON run configuration (default: the bundled reference
    /// configuration).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the configuration's out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Allow eps > regime_guard * delta^2 (outside the asymptotic
    /// smallness regime; support violations may then stop the run).
    #[arg(long, global = true)]
    override_regime_guard: bool,

    /// Worker threads for force evaluations (overrides the config;
    /// results are bit-identical for any value).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a full simulation: synthesize initial data, integrate, write
    /// checkpoints and reports.
    Run {
        /// Config path (positional alternative to --config).
        config: Option<PathBuf>,
    },
    /// Run the built-in property battery (no simulation, seconds).
    Verify,
    /// Tabulate force, potential and far-field force of a checkpoint on a
    /// radial grid "LO:HI:N" (CSV to stdout, or to --out DIR).
    FieldSnapshot {
        /// Checkpoint CSV file written by `run`.
        checkpoint: PathBuf,
        /// Radial grid as LO:HI:N (N points from LO to HI inclusive).
        grid: String,
    },
    /// Recompute the diagnostic report from a run directory's checkpoints.
    ScatterReport {
        /// Run directory (containing checkpoints/) or a checkpoint
        /// directory itself.
        run_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Run { ref config } => {
            let path = config.clone().or_else(|| cli.config.clone());
            cmd_run(&cli, path.as_deref())
        }
        Cmd::Verify => cmd_verify(),
        Cmd::FieldSnapshot {
            ref checkpoint,
            ref grid,
        } => cmd_field_snapshot(&cli, checkpoint, grid),
        Cmd::ScatterReport { ref run_dir } => cmd_scatter_report(&cli, run_dir),
    }
}

fn load_config(cli: &Cli, path: Option<&Path>) -> Result<RunConfig, Failure> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Failure::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::bundled_default(),
    };
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    config.validate(cli.override_regime_guard)?;
    Ok(config)
}

fn cmd_run(cli: &Cli, path: Option<&Path>) -> Result<(), Failure> {
    let config = load_config(cli, path)?;
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.out_dir));

    let RunOutcome {
        history,
        document,
        initial,
        out_dir,
    } = execute(&config, &out_dir)?;

    println!(
        "synthesized {} markers (total mass {:e}, sup moment {:e}, L2 moment {:e}, {} zero-angle nodes nudged)",
        history.n_markers(),
        initial.total_mass,
        initial.achieved_sup_moment,
        initial.achieved_l2_moment,
        initial.n_theta_nudged,
    );
    println!(
        "run complete: t = {} over {} snapshots, min support margin {:e}",
        document.report.t_final,
        history.n_times(),
        document.report.min_support_margin,
    );
    let checks = &document.checks;
    for (name, ok) in [
        ("support-margin-nonnegative", checks.support_margin_nonnegative),
        ("action-decay", checks.action_decay),
        ("corrected-angle-decay", checks.xi_decay),
        ("estimator-agreement", checks.estimator_agreement),
        ("tangent-in-bounds", checks.tangent_in_bounds),
    ] {
        println!("{} {}", if ok { "PASS" } else { "WARN" }, name);
    }
    println!("wrote {}", out_dir.join("report.json").display());
    Ok(())
}

fn cmd_verify() -> Result<(), Failure> {
    let stdout = std::io::stdout();
    if verify::run_battery(&mut stdout.lock()) {
        Ok(())
    } else {
        Err(Failure::Runtime("verification battery failed".into()))
    }
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = |msg: String| Failure::Config(format!("grid spec {spec:?}: {msg}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad("expected LO:HI:N".into()));
    }
    let lo: f64 = parts[0].parse().map_err(|e| bad(format!("bad LO: {e}")))?;
    let hi: f64 = parts[1].parse().map_err(|e| bad(format!("bad HI: {e}")))?;
    let n: usize = parts[2].parse().map_err(|e| bad(format!("bad N: {e}")))?;
    if !(lo.is_finite() && lo > 0.0 && hi.is_finite() && hi > lo) {
        return Err(bad("need 0 < LO < HI".into()));
    }
    if n < 2 {
        return Err(bad("need at least 2 points".into()));
    }
    Ok((0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect())
}

fn cmd_field_snapshot(cli: &Cli, checkpoint: &Path, grid: &str) -> Result<(), Failure> {
    let radii = parse_grid(grid)?;
    let cp = io::read_checkpoint(checkpoint).map_err(|e| Failure::Config(format!("{e:#}")))?;
    let view = build_field_view(cp.m, &cp.markers, cp.t)
        .map_err(|e| Failure::Config(format!("checkpoint field: {e}")))?;
    let runtime = |e: vlasov_kepler_core::field::FieldError| Failure::Runtime(e.to_string());
    let mut rows = Vec::with_capacity(radii.len());
    for r in radii {
        let force_effective = if cp.t > 0.0 {
            effective_force_at(&cp.markers, cp.t, r).map_err(runtime)?
        } else {
            // the far-field approximation degenerates at t = 0
            f64::NAN
        };
        rows.push(FieldRow {
            r,
            force: view.force_at(r).map_err(runtime)?,
            potential: view.potential_at(r).map_err(runtime)?,
            force_effective,
        });
    }
    let write_err = |e: anyhow::Error| Failure::Runtime(format!("{e:#}"));
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| Failure::Runtime(format!("creating {}: {e}", dir.display())))?;
            let path = dir.join("field_snapshot.csv");
            let mut file = std::fs::File::create(&path)
                .map_err(|e| Failure::Runtime(format!("creating {}: {e}", path.display())))?;
            io::write_field_rows(&mut file, &rows).map_err(write_err)?;
            println!("wrote {}", path.display());
        }
        None => {
            let stdout = std::io::stdout();
            io::write_field_rows(&mut stdout.lock(), &rows).map_err(write_err)?;
        }
    }
    Ok(())
}

fn cmd_scatter_report(cli: &Cli, run_dir: &Path) -> Result<(), Failure> {
    let cp_dir = if run_dir.join("checkpoints").is_dir() {
        run_dir.join("checkpoints")
    } else {
        run_dir.to_path_buf()
    };
    let history = io::history_from_checkpoint_dir(&cp_dir)
        .map_err(|e| Failure::Config(format!("{e:#}")))?;
    let report = scattering_report(&history, vlasov_kepler_cli::run::F_INFINITY_GRID)
        .map_err(|e| Failure::Runtime(format!("report assembly: {e}")))?;
    let checks = evaluate_checks(&history, &report);
    let document = ReportDocument { report, checks };
    let out_dir = cli.out.clone().unwrap_or_else(|| run_dir.to_path_buf());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::Runtime(format!("creating {}: {e}", out_dir.display())))?;
    vlasov_kepler_cli::run::write_reports(&out_dir, &history, &document)
        .map_err(|e| Failure::Runtime(format!("{e:#}")))?;
    println!(
        "recomputed report from {} checkpoints; wrote {}",
        history.n_times(),
        out_dir.join("report.json").display()
    );
    Ok(())
}
