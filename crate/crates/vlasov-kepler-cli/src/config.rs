//! Run configuration: a single self-contained JSON document.
//!
//! One config file fully determines a run (there is no random state), so
//! the document doubles as the reproducibility artifact: the driver copies
//! it next to the outputs it produced. All quantities are in the natural
//! units of the model (the point mass sets the scales); nothing carries SI
//! units.
//!
//! Validation distinguishes two failure classes that the executable maps
//! to exit codes: malformed or inadmissible configuration (exit 2) and
//! runtime regime violations (exit 1). Everything in this module is of the
//! first class.

use serde::{Deserialize, Serialize};
use vlasov_kepler_core::field::MomentSpec;

/// Version of the configuration schema accepted by this binary.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Smallest admissible `4 a^2 ell / m^2` over the sampling box. Below this
/// the orbit parameter `kappa` is within ~5e-11 of 1 and the profile
/// solves lose their conditioning guarantee.
pub const MIN_ECCENTRICITY_GAP: f64 = 1e-10;

/// A one-dimensional smooth bump descriptor: the density factor along one
/// axis is `exp(1 - 1/(1 - s^2))` with `s = (x - center)/half_width`,
/// supported on `|s| < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpAxis {
    /// Center of the bump support.
    pub center: f64,
    /// Half-width of the bump support (must be positive).
    pub half_width: f64,
}

impl BumpAxis {
    /// The bump filling `[lo, hi]` exactly.
    pub fn filling(lo: f64, hi: f64) -> Self {
        Self {
            center: 0.5 * (lo + hi),
            half_width: 0.5 * (hi - lo),
        }
    }

    /// Support endpoints `(center - half_width, center + half_width)`.
    pub fn support(&self) -> (f64, f64) {
        (self.center - self.half_width, self.center + self.half_width)
    }

    /// The smooth bump value at `x`: `exp(1 - 1/(1 - s^2))` inside the
    /// support, `0` outside (infinitely flat at the edges).
    pub fn eval(&self, x: f64) -> f64 {
        let s = (x - self.center) / self.half_width;
        let s2 = s * s;
        if s2 < 1.0 {
            (1.0 - 1.0 / (1.0 - s2)).exp()
        } else {
            0.0
        }
    }
}

/// Complete description of one simulation run.
///
/// The initial density is a separable product of smooth bumps in
/// `(theta, a, ell)`, sampled on a tensor midpoint grid over the three
/// domain boxes; its amplitude is rescaled so the configured sup moment
/// norm equals `eps` exactly. Omitted bump descriptors default to bumps
/// filling the corresponding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must equal [`CONFIG_SCHEMA_VERSION`].
    pub schema_version: u32,

    /// Central point mass, `> 0`.
    pub m: f64,
    /// Coupling strength of the self-consistent field, `>= 0`.
    pub lambda: f64,
    /// Target smallness of the initial data: the sup moment norm of the
    /// synthesized density equals `eps`.
    pub eps: f64,
    /// Support parameter: the initial bump must lie in the region
    /// `a <ell>^(1/2) > delta`, and markers must stay above `delta/2`.
    pub delta: f64,
    /// Smallness guard: require `eps <= regime_guard * delta^2` unless
    /// overridden on the command line.
    #[serde(default = "default_regime_guard")]
    pub regime_guard: f64,

    /// Sampling box for the angle.
    pub theta_box: [f64; 2],
    /// Sampling box for the action (positive).
    pub a_box: [f64; 2],
    /// Sampling box for the squared angular momentum (positive).
    pub ell_box: [f64; 2],
    /// Number of midpoint nodes along `theta`.
    pub n_theta: usize,
    /// Number of midpoint nodes along `a`.
    pub n_a: usize,
    /// Number of midpoint nodes along `ell`.
    pub n_ell: usize,

    /// Bump descriptor along `theta`; `null` means "fill `theta_box`".
    #[serde(default)]
    pub theta_bump: Option<BumpAxis>,
    /// Bump descriptor along `a`; `null` means "fill `a_box`".
    #[serde(default)]
    pub a_bump: Option<BumpAxis>,
    /// Bump descriptor along `ell`; `null` means "fill `ell_box`".
    #[serde(default)]
    pub ell_bump: Option<BumpAxis>,

    /// Exponents `[j_ell, j_ell_inv, j_a, j_theta]` of the moment weight
    /// `<ell>^j1 ell^-j2 (a + 1/a)^j3 <theta>^j4` used for normalization
    /// and reporting.
    #[serde(default = "default_moment_exponents")]
    pub moment_exponents: [u32; 4],

    /// Final time of the run, `>= 0`.
    pub t_end: f64,
    /// Hard cap on the integrator step.
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    /// Step-growth coefficient of the adaptive policy.
    #[serde(default = "default_c_cfl")]
    pub c_cfl: f64,
    /// Number of snapshot times (log-spaced in `1 + t`).
    #[serde(default = "default_n_snapshots")]
    pub n_snapshots: usize,

    /// Exclude each marker's own mass from the force it feels.
    #[serde(default)]
    pub exclude_self: bool,
    /// Carry the tangent (variational) flow alongside the markers.
    #[serde(default = "default_true")]
    pub with_tangents: bool,
    /// Determinism contract marker. The simulator has no random state and
    /// always produces bit-identical outputs for identical configs on the
    /// same platform; the flag records that contract in the artifact and
    /// must be `true`.
    #[serde(default = "default_true")]
    pub deterministic: bool,
    /// Worker threads for force evaluations (results are bit-identical
    /// for any value; overridable with `--threads`).
    #[serde(default = "default_threads")]
    pub threads: usize,

    /// Output directory (overridable with `--out`).
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

fn default_regime_guard() -> f64 {
    0.2
}
fn default_moment_exponents() -> [u32; 4] {
    [1, 1, 1, 1]
}
fn default_dt_max() -> f64 {
    0.05
}
fn default_c_cfl() -> f64 {
    0.1
}
fn default_n_snapshots() -> usize {
    60
}
fn default_true() -> bool {
    true
}
fn default_threads() -> usize {
    1
}
fn default_out_dir() -> String {
    "vlasov-out".to_owned()
}

/// A configuration-class failure (exit code 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn fail(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

fn check_box(name: &str, b: [f64; 2], positive: bool) -> Result<(), ConfigError> {
    if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
        return Err(fail(format!(
            "{name} must be a finite interval [lo, hi] with lo < hi, got [{}, {}]",
            b[0], b[1]
        )));
    }
    if positive && !(b[0] > 0.0) {
        return Err(fail(format!(
            "{name} must be strictly positive, got lower edge {}",
            b[0]
        )));
    }
    Ok(())
}

impl RunConfig {
    /// The bundled default configuration: the reference desk-scale run.
    pub fn bundled_default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            m: 1.0,
            lambda: 1.0,
            eps: 0.04,
            delta: 0.5,
            regime_guard: default_regime_guard(),
            theta_box: [-1.0, 1.0],
            a_box: [1.0, 2.0],
            ell_box: [0.5, 2.0],
            n_theta: 33,
            n_a: 33,
            n_ell: 9,
            theta_bump: None,
            a_bump: None,
            ell_bump: None,
            moment_exponents: default_moment_exponents(),
            t_end: 200.0,
            dt_max: default_dt_max(),
            c_cfl: default_c_cfl(),
            n_snapshots: default_n_snapshots(),
            exclude_self: false,
            with_tangents: true,
            deterministic: true,
            threads: default_threads(),
            out_dir: default_out_dir(),
        }
    }

    /// Parses a configuration from a JSON string.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| fail(format!("invalid config JSON: {e}")))
    }

    /// Serializes the configuration as pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The effective bump descriptors `(theta, a, ell)`, with omitted ones
    /// filled in from the boxes.
    pub fn bumps(&self) -> [BumpAxis; 3] {
        [
            self.theta_bump
                .unwrap_or_else(|| BumpAxis::filling(self.theta_box[0], self.theta_box[1])),
            self.a_bump
                .unwrap_or_else(|| BumpAxis::filling(self.a_box[0], self.a_box[1])),
            self.ell_bump
                .unwrap_or_else(|| BumpAxis::filling(self.ell_box[0], self.ell_box[1])),
        ]
    }

    /// The configured moment weight.
    pub fn moment_spec(&self) -> MomentSpec {
        MomentSpec {
            j_ell: self.moment_exponents[0],
            j_ell_inv: self.moment_exponents[1],
            j_a: self.moment_exponents[2],
            j_theta: self.moment_exponents[3],
        }
    }

    /// Margin of the initial bump support inside the scattering region:
    /// `min over the support of a sqrt(<ell>) - delta`. The minimum sits at
    /// the lower support corner because `a sqrt(<ell>)` is increasing in
    /// both variables.
    pub fn bump_support_margin(&self) -> f64 {
        let [_, ba, bl] = self.bumps();
        let a_lo = ba.support().0;
        let ell_lo = bl.support().0;
        a_lo * vlasov_kepler_core::japanese_bracket(ell_lo).sqrt() - self.delta
    }

    /// Full admissibility check. `override_regime_guard` skips only the
    /// `eps <= regime_guard * delta^2` smallness test; every geometric and
    /// structural requirement still applies.
    pub fn validate(&self, override_regime_guard: bool) -> Result<(), ConfigError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(fail(format!(
                "unsupported schema_version {} (this binary reads version {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.m.is_finite() && self.m > 0.0) {
            return Err(fail(format!("m must be positive, got {}", self.m)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(fail(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(fail(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(fail(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.regime_guard.is_finite() && self.regime_guard > 0.0) {
            return Err(fail(format!(
                "regime_guard must be positive, got {}",
                self.regime_guard
            )));
        }

        check_box("theta_box", self.theta_box, false)?;
        check_box("a_box", self.a_box, true)?;
        check_box("ell_box", self.ell_box, true)?;
        if self.n_theta == 0 || self.n_a == 0 || self.n_ell == 0 {
            return Err(fail("grid sizes n_theta, n_a, n_ell must all be >= 1"));
        }
        if self.n_snapshots == 0 {
            return Err(fail("n_snapshots must be >= 1"));
        }
        if self.threads == 0 {
            return Err(fail("threads must be >= 1"));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(fail(format!(
                "t_end must be nonnegative, got {}",
                self.t_end
            )));
        }
        if !(self.dt_max.is_finite() && self.dt_max > 0.0) {
            return Err(fail(format!(
                "dt_max must be positive, got {}",
                self.dt_max
            )));
        }
        if !(self.c_cfl.is_finite() && self.c_cfl > 0.0) {
            return Err(fail(format!("c_cfl must be positive, got {}", self.c_cfl)));
        }
        if self.out_dir.is_empty() {
            return Err(fail("out_dir must not be empty"));
        }
        if !self.deterministic {
            return Err(fail(
                "deterministic = false is not supported: the simulator has no \
                 nondeterministic mode",
            ));
        }

        let [bt, ba, bl] = self.bumps();
        for (name, b) in [("theta_bump", bt), ("a_bump", ba), ("ell_bump", bl)] {
            if !(b.center.is_finite() && b.half_width.is_finite() && b.half_width > 0.0) {
                return Err(fail(format!(
                    "{name} must have finite center and positive half_width"
                )));
            }
        }
        if !(ba.support().0 > 0.0) {
            return Err(fail(format!(
                "a_bump support must stay positive, got lower edge {}",
                ba.support().0
            )));
        }
        if !(bl.support().0 > 0.0) {
            return Err(fail(format!(
                "ell_bump support must stay positive, got lower edge {}",
                bl.support().0
            )));
        }

        // The bump (where the density actually lives) needs a strictly
        // positive margin inside the scattering region a sqrt(<ell>) > delta.
        let margin = self.bump_support_margin();
        if !(margin > 0.0) {
            return Err(fail(format!(
                "initial bump support must lie strictly inside the scattering \
                 region a sqrt(<ell>) > delta (margin {margin:.6e}; grow a/ell \
                 supports or shrink delta)"
            )));
        }
        // Every sampled marker (even zero-density ones outside the bump)
        // must satisfy the runtime threshold a sqrt(<ell>) >= delta/2.
        let box_value = self.a_box[0] * vlasov_kepler_core::japanese_bracket(self.ell_box[0]).sqrt();
        if !(box_value >= 0.5 * self.delta) {
            return Err(fail(format!(
                "sampling box corner violates a sqrt(<ell>) >= delta/2 \
                 ({box_value:.6e} < {:.6e})",
                0.5 * self.delta
            )));
        }
        // Orbit-parameter conditioning: keep kappa away from 1.
        let gap = 4.0 * self.a_box[0] * self.a_box[0] * self.ell_box[0] / (self.m * self.m);
        if !(gap >= MIN_ECCENTRICITY_GAP) {
            return Err(fail(format!(
                "angular momentum too small for conditioned orbit solves: \
                 4 a^2 ell / m^2 = {gap:.3e} < {MIN_ECCENTRICITY_GAP:.1e} at the box corner"
            )));
        }

        if !override_regime_guard {
            let cap = self.regime_guard * self.delta * self.delta;
            if !(self.eps <= cap) {
                return Err(fail(format!(
                    "eps = {} exceeds regime_guard * delta^2 = {cap} (the smallness \
                     hypothesis of the asymptotic regime); pass \
                     --override-regime-guard to run anyway",
                    self.eps
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_default_is_valid_and_round_trips() {
        let cfg = RunConfig::bundled_default();
        cfg.validate(false).expect("default config valid");
        let text = cfg.to_json();
        let back = RunConfig::from_json(&text).expect("parses");
        assert_eq!(cfg, back);
    }

    #[test]
    fn regime_guard_blocks_large_eps_unless_overridden() {
        let mut cfg = RunConfig::bundled_default();
        cfg.eps = cfg.delta; // far above guard * delta^2
        let err = cfg.validate(false).expect_err("guard trips");
        assert!(err.0.contains("regime_guard"), "message: {}", err.0);
        cfg.validate(true).expect("override admits it");
    }

    #[test]
    fn bump_outside_scattering_region_is_rejected() {
        let mut cfg = RunConfig::bundled_default();
        cfg.delta = 1.3; // corner value a sqrt(<ell>) = 1.2247 at (1, 0.5)
        cfg.eps = 0.2 * 1.3 * 1.3 * 0.9; // keep the guard satisfied
        let err = cfg.validate(false).expect_err("support check trips");
        assert!(err.0.contains("scattering region"), "message: {}", err.0);
    }

    #[test]
    fn structural_errors_are_reported() {
        let mut cfg = RunConfig::bundled_default();
        cfg.schema_version = 99;
        assert!(cfg.validate(false).is_err());

        let mut cfg = RunConfig::bundled_default();
        cfg.a_box = [0.0, 2.0];
        assert!(cfg.validate(false).is_err());

        let mut cfg = RunConfig::bundled_default();
        cfg.n_a = 0;
        assert!(cfg.validate(false).is_err());

        let mut cfg = RunConfig::bundled_default();
        cfg.deterministic = false;
        assert!(cfg.validate(false).is_err());

        let mut cfg = RunConfig::bundled_default();
        cfg.ell_bump = Some(BumpAxis {
            center: 0.5,
            half_width: 0.6,
        });
        assert!(cfg.validate(false).is_err(), "ell support dips below zero");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut doc: serde_json::Value =
            serde_json::from_str(&RunConfig::bundled_default().to_json()).unwrap();
        doc.as_object_mut()
            .unwrap()
            .insert("typo_field".into(), serde_json::json!(1));
        assert!(RunConfig::from_json(&doc.to_string()).is_err());
    }

    #[test]
    fn bump_eval_matches_definition_and_vanishes_outside() {
        let b = BumpAxis {
            center: 1.0,
            half_width: 2.0,
        };
        assert_eq!(b.eval(1.0), 1.0); // exp(0) at the center
        assert_eq!(b.eval(3.0), 0.0);
        assert_eq!(b.eval(-1.0), 0.0);
        assert_eq!(b.eval(5.0), 0.0);
        let s: f64 = 0.5;
        let expect = (1.0 - 1.0 / (1.0 - s * s)).exp();
        assert_eq!(b.eval(2.0), expect);
    }
}
