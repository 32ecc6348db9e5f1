//! Run orchestration: schedule construction, execution, report assembly,
//! and the exit-code classification of failures.

use std::path::{Path, PathBuf};

use serde::Serialize;
use vlasov_kepler_core::diagnostics::{scattering_report, ScatteringReport};
use vlasov_kepler_core::dynamics::{run, DynError, Ensemble, History, Schedule, StepSettings};
use vlasov_kepler_core::kepler::PhysicalConstants;

use crate::config::{ConfigError, RunConfig};
use crate::init::{synthesize_initial, InitialData};
use crate::io;

/// Grid resolution of the limiting-field curve in reports.
pub const F_INFINITY_GRID: usize = 33;

/// A failure classified by exit code: configuration errors exit with 2,
/// runtime (regime/support/numerical/IO) failures with 1.
#[derive(Debug)]
pub enum Failure {
    /// Inadmissible configuration or input artifact (exit 2).
    Config(String),
    /// Failure while running or writing results (exit 1).
    Runtime(String),
}

impl Failure {
    /// The process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }

    /// The human-readable message.
    pub fn message(&self) -> &str {
        match self {
            Self::Config(msg) | Self::Runtime(msg) => msg,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.0)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message())
    }
}

impl std::error::Error for Failure {}

fn dyn_failure(e: DynError) -> Failure {
    match e {
        DynError::SupportViolation { .. } => {
            Failure::Runtime(format!("regime violation: {e}"))
        }
        DynError::BadSettings(_) | DynError::BadSchedule(_) => Failure::Config(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    }
}

/// Builds the snapshot schedule: `n_snapshots` times log-spaced in
/// `1 + t` from `0` to `t_end`, with `10`, `t_end/2` and `t_end` always
/// included (diagnostics anchor there). Times need not be step multiples;
/// the integrator lands on each record time with a shortened final step.
pub fn build_schedule(t_end: f64, n_snapshots: usize) -> Schedule {
    if t_end <= 0.0 {
        return Schedule {
            t_end: 0.0,
            record_times: vec![0.0],
        };
    }
    let n = n_snapshots.max(2);
    let mut times = Vec::with_capacity(n + 3);
    for k in 0..n {
        let frac = k as f64 / (n - 1) as f64;
        times.push((1.0 + t_end).powf(frac) - 1.0);
    }
    for forced in [10.0, 0.5 * t_end, t_end] {
        if forced > 0.0 && forced <= t_end {
            times.push(forced);
        }
    }
    times.push(0.0);
    times.sort_by(f64::total_cmp);
    times.dedup();
    // The power-law endpoints can round off t_end; pin the final time.
    while times.last().is_some_and(|last| *last >= t_end) {
        times.pop();
    }
    times.push(t_end);
    Schedule {
        t_end,
        record_times: times,
    }
}

/// Post-run pass/fail summary flags: the headline expectations of the
/// asymptotic regime, evaluated on the report with the documented
/// thresholds. Informational — a run that completes exits 0 regardless.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Checks {
    /// Every recorded support margin was nonnegative.
    pub support_margin_nonnegative: bool,
    /// Action deviation decayed with fitted slope <= -0.4 (or sat below
    /// the noise floor).
    pub action_decay: bool,
    /// Corrected-angle deviation decayed with fitted slope <= -0.3 (or
    /// sat below the noise floor).
    pub xi_decay: bool,
    /// The two limiting-field estimators agreed within 5% (integrated
    /// relative discrepancy) on the support interior (vacuously true for
    /// zero-duration runs).
    pub estimator_agreement: bool,
    /// The action tangent stayed within [0.4, 1.6] (vacuously true when
    /// the tangent flow was off).
    pub tangent_in_bounds: bool,
    /// Conjunction of the above.
    pub all: bool,
}

/// Evaluates the summary flags of a finished report.
pub fn evaluate_checks(history: &History, report: &ScatteringReport) -> Checks {
    let support_margin_nonnegative = history.support_margins.iter().all(|m| *m >= 0.0);
    let action_decay =
        report.action_fit.all_below_floor || report.action_fit.slope <= -0.4;
    let xi_decay = report.xi_fit.all_below_floor || report.xi_fit.slope <= -0.3;
    let estimator_agreement = report
        .f_infinity
        .as_ref()
        .map_or(true, |curve| curve.rel_l1_discrepancy <= 0.05);
    let tangent_in_bounds = report
        .action_tangent_range
        .map_or(true, |(lo, hi)| lo >= 0.4 && hi <= 1.6);
    let all = support_margin_nonnegative
        && action_decay
        && xi_decay
        && estimator_agreement
        && tangent_in_bounds;
    Checks {
        support_margin_nonnegative,
        action_decay,
        xi_decay,
        estimator_agreement,
        tangent_in_bounds,
        all,
    }
}

/// The report document persisted as `report.json`: the full diagnostic
/// report plus the summary flags.
#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument {
    /// Full diagnostic report.
    pub report: ScatteringReport,
    /// Headline pass/fail flags.
    pub checks: Checks,
}

/// Everything `execute` returns to the caller.
#[derive(Debug)]
pub struct RunOutcome {
    /// The recorded history.
    pub history: History,
    /// The assembled report with flags.
    pub document: ReportDocument,
    /// The synthesized initial data summary.
    pub initial: InitialData,
    /// Paths written (report, series, checkpoints directory).
    pub out_dir: PathBuf,
}

/// Runs a validated configuration end to end and writes all artifacts
/// into `out_dir`: `config_used.json`, `checkpoints/checkpoint_*.csv`,
/// `report.json`, `series.csv`, and `f_infinity.csv`.
///
/// # Errors
///
/// [`Failure::Config`] for synthesis/constant errors (nothing is written
/// in that case); [`Failure::Runtime`] for support violations during the
/// run and for IO failures.
pub fn execute(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome, Failure> {
    let initial = synthesize_initial(config)?;
    let consts = PhysicalConstants::new(config.m, config.lambda)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let mut ens = Ensemble::new(
        initial.markers.clone(),
        consts,
        config.eps,
        config.delta,
    )
    .map_err(|e| Failure::Config(format!("initial ensemble rejected: {e}")))?;

    let schedule = build_schedule(config.t_end, config.n_snapshots);
    let settings = StepSettings {
        dt_max: config.dt_max,
        c_cfl: config.c_cfl,
        exclude_self: config.exclude_self,
        threads: config.threads,
    };
    let history =
        run(&mut ens, &schedule, &settings, config.with_tangents).map_err(dyn_failure)?;

    let report = scattering_report(&history, F_INFINITY_GRID)
        .map_err(|e| Failure::Runtime(format!("report assembly: {e}")))?;
    let checks = evaluate_checks(&history, &report);
    let document = ReportDocument { report, checks };

    write_outputs(config, &history, &document, out_dir)
        .map_err(|e| Failure::Runtime(format!("{e:#}")))?;

    Ok(RunOutcome {
        history,
        document,
        initial,
        out_dir: out_dir.to_path_buf(),
    })
}

fn write_outputs(
    config: &RunConfig,
    history: &History,
    document: &ReportDocument,
    out_dir: &Path,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config_used.json"), config.to_json() + "\n")?;
    io::write_history_checkpoints(&out_dir.join("checkpoints"), history)?;
    write_reports(out_dir, history, document)
}

/// Writes `report.json`, `series.csv` and (when present) `f_infinity.csv`
/// into `out_dir`. Shared by `run` and `scatter-report`.
pub fn write_reports(
    out_dir: &Path,
    history: &History,
    document: &ReportDocument,
) -> anyhow::Result<()> {
    io::write_json(&out_dir.join("report.json"), document)?;
    io::write_series_csv(&out_dir.join("series.csv"), history, &document.report)?;
    if let Some(curve) = &document.report.f_infinity {
        io::write_f_infinity_csv(&out_dir.join("f_infinity.csv"), curve)?;
    }
    Ok(())
}
