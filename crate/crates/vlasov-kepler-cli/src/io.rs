//! File formats: checkpoint CSV, report JSON, and plot-ready CSV series.
//!
//! Checkpoints are plain CSV with a small `# key=value` header — one file
//! per recorded time, self-contained (constants plus every marker). Floats
//! are written with Rust's shortest round-trip formatting in exponent
//! notation, so `write -> read` reproduces every bit and a reloaded run
//! continues exactly like an uninterrupted one.
//!
//! A directory of checkpoints can be folded back into a run history; the
//! fold cross-checks the invariants a genuine run guarantees (consistent
//! constants, strictly increasing times, bitwise-identical static marker
//! data) and rejects the directory as corrupt otherwise.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use vlasov_kepler_core::dynamics::{support_margin, History};
use vlasov_kepler_core::field::Marker;
use vlasov_kepler_core::kepler::PhysicalConstants;

/// Version of the checkpoint layout written by this binary.
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// One deserialized checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Layout version of the file.
    pub schema_version: u32,
    /// Snapshot time.
    pub t: f64,
    /// Point mass.
    pub m: f64,
    /// Coupling.
    pub lambda: f64,
    /// Smallness parameter of the run.
    pub eps: f64,
    /// Support parameter of the run.
    pub delta: f64,
    /// Markers in ensemble order.
    pub markers: Vec<Marker>,
}

/// Canonical checkpoint filename for snapshot index `k`.
pub fn checkpoint_filename(k: usize) -> String {
    format!("checkpoint_{k:04}.csv")
}

/// Writes one checkpoint file (creates/truncates `path`).
pub fn write_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "# schema_version={}", cp.schema_version).unwrap();
    writeln!(text, "# t={:e}", cp.t).unwrap();
    writeln!(text, "# m={:e}", cp.m).unwrap();
    writeln!(text, "# lambda={:e}", cp.lambda).unwrap();
    writeln!(text, "# eps={:e}", cp.eps).unwrap();
    writeln!(text, "# delta={:e}", cp.delta).unwrap();
    writeln!(text, "theta,a,ell,w,g").unwrap();
    for mk in &cp.markers {
        writeln!(
            text,
            "{:e},{:e},{:e},{:e},{:e}",
            mk.theta, mk.a, mk.ell, mk.w, mk.g
        )
        .unwrap();
    }
    fs::write(path, text).with_context(|| format!("writing checkpoint {}", path.display()))?;
    Ok(())
}

fn parse_header_line(line: Option<&str>, key: &str, path: &Path) -> Result<f64> {
    let line = line.with_context(|| format!("{}: truncated header", path.display()))?;
    let value = line
        .strip_prefix("# ")
        .and_then(|rest| rest.strip_prefix(key))
        .and_then(|rest| rest.strip_prefix('='))
        .with_context(|| format!("{}: expected header line '# {key}=...'", path.display()))?;
    value
        .trim()
        .parse::<f64>()
        .with_context(|| format!("{}: bad value for {key}: {value:?}", path.display()))
}

/// Reads one checkpoint file.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let version = parse_header_line(lines.next(), "schema_version", path)?;
    if version != f64::from(CHECKPOINT_SCHEMA_VERSION) {
        bail!(
            "{}: unsupported checkpoint schema_version {version} (this binary reads \
             version {CHECKPOINT_SCHEMA_VERSION})",
            path.display()
        );
    }
    let t = parse_header_line(lines.next(), "t", path)?;
    let m = parse_header_line(lines.next(), "m", path)?;
    let lambda = parse_header_line(lines.next(), "lambda", path)?;
    let eps = parse_header_line(lines.next(), "eps", path)?;
    let delta = parse_header_line(lines.next(), "delta", path)?;
    match lines.next() {
        Some("theta,a,ell,w,g") => {}
        other => bail!(
            "{}: expected column header 'theta,a,ell,w,g', got {other:?}",
            path.display()
        ),
    }
    let mut markers = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| -> Result<f64> {
            fields
                .next()
                .with_context(|| {
                    format!("{}: row {row}: missing field {name}", path.display())
                })?
                .parse::<f64>()
                .with_context(|| format!("{}: row {row}: bad {name}", path.display()))
        };
        let marker = Marker {
            theta: next("theta")?,
            a: next("a")?,
            ell: next("ell")?,
            w: next("w")?,
            g: next("g")?,
        };
        if fields.next().is_some() {
            bail!("{}: row {row}: too many fields", path.display());
        }
        markers.push(marker);
    }
    Ok(Checkpoint {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        t,
        m,
        lambda,
        eps,
        delta,
        markers,
    })
}

/// Writes one checkpoint per recorded time of `history` into `dir`
/// (created if missing). Returns the paths in time order.
pub fn write_history_checkpoints(dir: &Path, history: &History) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if history.n_times() > 9999 {
        bail!("too many snapshots for the 4-digit checkpoint naming scheme");
    }
    let mut paths = Vec::with_capacity(history.n_times());
    for k in 0..history.n_times() {
        let markers = vlasov_kepler_core::diagnostics::snapshot(history, k)
            .map_err(|e| anyhow::anyhow!("snapshot {k}: {e}"))?;
        let cp = Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            t: history.times[k],
            m: history.consts.m,
            lambda: history.consts.lambda,
            eps: history.eps,
            delta: history.delta,
            markers,
        };
        let path = dir.join(checkpoint_filename(k));
        write_checkpoint(&path, &cp)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Folds a directory of checkpoint files back into a run history
/// (without tangents — those are not persisted).
///
/// # Errors
///
/// Rejects empty directories and any inconsistency that a genuine run
/// cannot produce: differing constants, non-increasing times, differing
/// marker counts, or static marker data (`ell`, `w`, `g`) that is not
/// bitwise identical across snapshots.
pub fn history_from_checkpoint_dir(dir: &Path) -> Result<History> {
    let mut names = Vec::new();
    for entry in
        fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?
    {
        let name = entry?.file_name();
        let name = name.to_string_lossy().into_owned();
        if name.starts_with("checkpoint_") && name.ends_with(".csv") {
            names.push(name);
        }
    }
    if names.is_empty() {
        bail!("no checkpoint_*.csv files in {}", dir.display());
    }
    names.sort();

    let mut checkpoints = Vec::with_capacity(names.len());
    for name in &names {
        checkpoints.push(read_checkpoint(&dir.join(name))?);
    }

    let first = &checkpoints[0];
    let n = first.markers.len();
    let consts = PhysicalConstants::new(first.m, first.lambda)
        .map_err(|e| anyhow::anyhow!("checkpoint constants: {e}"))?;

    let mut times = Vec::with_capacity(checkpoints.len());
    let mut thetas = Vec::with_capacity(checkpoints.len());
    let mut actions = Vec::with_capacity(checkpoints.len());
    let mut support_margins = Vec::with_capacity(checkpoints.len());
    for (k, cp) in checkpoints.iter().enumerate() {
        if cp.m != first.m
            || cp.lambda != first.lambda
            || cp.eps != first.eps
            || cp.delta != first.delta
        {
            bail!("{}: constants differ from {}", names[k], names[0]);
        }
        if cp.markers.len() != n {
            bail!(
                "{}: {} markers, but {} has {n}",
                names[k],
                cp.markers.len(),
                names[0]
            );
        }
        if let Some(prev) = times.last() {
            if !(cp.t > *prev) {
                bail!("{}: time {} does not increase past {prev}", names[k], cp.t);
            }
        }
        for (i, (mk, mk0)) in cp.markers.iter().zip(&first.markers).enumerate() {
            if mk.ell != mk0.ell || mk.w != mk0.w || mk.g != mk0.g {
                bail!(
                    "{}: marker {i}: static data (ell, w, g) differs from {} — \
                     checkpoint series corrupt",
                    names[k],
                    names[0]
                );
            }
        }
        times.push(cp.t);
        thetas.push(cp.markers.iter().map(|mk| mk.theta).collect());
        actions.push(cp.markers.iter().map(|mk| mk.a).collect());
        support_margins.push(support_margin(&cp.markers, cp.delta));
    }

    Ok(History {
        consts,
        eps: first.eps,
        delta: first.delta,
        times,
        thetas,
        actions,
        ell: first.markers.iter().map(|mk| mk.ell).collect(),
        w: first.markers.iter().map(|mk| mk.w).collect(),
        g: first.markers.iter().map(|mk| mk.g).collect(),
        tangents: None,
        support_margins,
    })
}

/// Serializes `value` as pretty JSON at `path` (trailing newline added).
pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes the per-time diagnostic series of a report as CSV.
pub fn write_series_csv(
    path: &Path,
    history: &History,
    report: &vlasov_kepler_core::diagnostics::ScatteringReport,
) -> Result<()> {
    let mut text = String::new();
    writeln!(
        text,
        "t,action_deviation,xi_deviation,xi_deviation_half,angle_growth,weak_w1,support_margin"
    )
    .unwrap();
    for k in 0..report.times.len() {
        writeln!(
            text,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            report.times[k],
            report.action_deviation[k],
            report.xi_deviation[k],
            report.xi_deviation_half[k],
            report.angle_growth[k],
            report.weak_w1[k],
            history.support_margins[k],
        )
        .unwrap();
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes the two limiting-field estimator curves as CSV.
pub fn write_f_infinity_csv(
    path: &Path,
    curve: &vlasov_kepler_core::diagnostics::FInfinityCurve,
) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "a,f_main,f_alt").unwrap();
    for k in 0..curve.a_grid.len() {
        writeln!(
            text,
            "{:e},{:e},{:e}",
            curve.a_grid[k], curve.f_main[k], curve.f_alt[k]
        )
        .unwrap();
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One row of a field tabulation.
#[derive(Debug, Clone, Copy)]
pub struct FieldRow {
    /// Query radius.
    pub r: f64,
    /// Radial force of the marker ensemble at `r`.
    pub force: f64,
    /// Potential at `r`.
    pub potential: f64,
    /// Far-field (effective) force at `r`; `NaN` at `t = 0` where the
    /// far-field approximation is undefined.
    pub force_effective: f64,
}

/// Writes a field tabulation as CSV to any writer (file or stdout).
pub fn write_field_rows(out: &mut impl std::io::Write, rows: &[FieldRow]) -> Result<()> {
    writeln!(out, "r,force,potential,force_effective").context("writing field CSV")?;
    for row in rows {
        writeln!(
            out,
            "{:e},{:e},{:e},{:e}",
            row.r, row.force, row.potential, row.force_effective
        )
        .context("writing field CSV")?;
    }
    Ok(())
}
