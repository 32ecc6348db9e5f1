//! Time integration of the self-consistent characteristic system.
//!
//! Each marker follows the canonical equations in action-angle variables,
//!
//! ```text
//! dtheta/dt = -lambda F(t, Rt) dRt/da,
//! da/dt     =  lambda F(t, Rt) dRt/dtheta,
//! ```
//!
//! where `F` is the ensemble's own field ([`crate::field`]) and `Rt` the
//! time-shifted radius of the marker. At `lambda = 0` every marker is an
//! exact fixed point — the shifted variables absorb the free flow — so all
//! motion integrated here is the self-consistent correction.
//!
//! The integrator is the explicit midpoint rule with the field frozen per
//! stage: stage one builds a [`FieldView`] at `t`, stage two rebuilds it at
//! `t + dt/2` from the half-advanced ensemble. The per-marker velocity
//! field is divergence-free in `(theta, a)` (the two force components are
//! the mixed partials of a single potential), so the one-step flow map is
//! volume preserving up to `O(dt^3)` — a property the test suite measures
//! directly on tangent pairs.
//!
//! The tangent flow propagates per-marker derivatives with respect to the
//! initial action through the same two-stage scheme, using the analytic
//! radius jet and a mollified radial derivative of the field (central
//! difference at scale `(1 + t)/sqrt(N)`, the ensemble's own resolution
//! scale; the atomic field has no pointwise derivative). The tangent
//! update matrix is exactly the Jacobian of the discrete position update,
//! so tangents can be cross-checked against finite differences of twin
//! runs seeded with massless tracers.
//!
//! Support monitoring: all dynamics assume markers stay in the uniformly
//! hyperbolic region `D(delta/2) = {a (2 + ell^2)^(1/4) >= delta/2}`.
//! Every step re-checks membership and fails loudly on exit — by the
//! supporting theory that only happens when the smallness parameter `eps`
//! is out of regime relative to `delta^2`, which is a configuration
//! problem, not an integration bug.
//!
//! Determinism: marker evaluations within a stage are pure functions of
//! the immutable stage view and may be chunked across threads; results are
//! stored by marker index and every reduction runs sequentially in index
//! order, so outputs are bit-identical for any thread count.

use alloc::vec::Vec;

use crate::action_angle::{shifted_radius, MapError};
use crate::field::{build_field_view, FieldError, FieldView, Marker};
use crate::japanese_bracket;
use crate::kepler::PhysicalConstants;
use crate::math;

/// A marker ensemble with its physical constants and regime parameters.
#[derive(Debug, Clone)]
pub struct Ensemble {
    /// Markers in a fixed order (the order is part of the determinism
    /// contract; it never changes during a run).
    pub markers: Vec<Marker>,
    /// Point-mass strength and coupling.
    pub consts: PhysicalConstants,
    /// Smallness parameter of the initial density (diagnostic metadata;
    /// the dynamics itself only sees the marker masses).
    pub eps: f64,
    /// Support parameter: markers must stay in `D(delta/2)`.
    pub delta: f64,
    /// Current time.
    pub t: f64,
}

/// Per-marker derivative of the flow with respect to the initial action.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TangentState {
    /// `d theta(t) / d a(0)`.
    pub d_theta_da: f64,
    /// `d a(t) / d a(0)`.
    pub d_a_da: f64,
}

impl TangentState {
    /// The `t = 0` initial condition `(0, 1)`.
    #[inline]
    pub fn identity() -> Self {
        Self {
            d_theta_da: 0.0,
            d_a_da: 1.0,
        }
    }
}

/// Integration settings shared by [`step`] and [`run`].
#[derive(Debug, Clone, Copy)]
pub struct StepSettings {
    /// Hard cap on the step size.
    pub dt_max: f64,
    /// Step-growth coefficient: the adaptive policy allows
    /// `dt = c_cfl (1 + t) / rate_scale`, letting steps grow as the
    /// self-consistent forces decay.
    pub c_cfl: f64,
    /// Remove each marker's own mass from its force queries. Default
    /// `false` (the closed enclosed-mass kernel includes it); the exclusion
    /// makes an isolated marker an exact fixed point.
    pub exclude_self: bool,
    /// Worker threads for the per-marker stage evaluations (`1` =
    /// sequential). Results are bit-identical for any value.
    pub threads: usize,
}

impl Default for StepSettings {
    fn default() -> Self {
        Self {
            dt_max: 0.05,
            c_cfl: 0.1,
            exclude_self: false,
            threads: 1,
        }
    }
}

/// Record-time schedule of a run. `t_end` must equal the last record time.
#[derive(Debug, Clone)]
pub struct Schedule {
    /// Final time of the run.
    pub t_end: f64,
    /// Strictly increasing times at which snapshots are recorded; the
    /// first may equal the start time, the last must equal `t_end`.
    pub record_times: Vec<f64>,
}

/// Everything a run records: per-time marker snapshots plus the immutable
/// per-marker statics. Downstream analysis works from this structure
/// alone.
#[derive(Debug, Clone)]
pub struct History {
    /// Physical constants of the run.
    pub consts: PhysicalConstants,
    /// Smallness parameter (metadata).
    pub eps: f64,
    /// Support parameter (metadata).
    pub delta: f64,
    /// Recorded times, strictly increasing.
    pub times: Vec<f64>,
    /// `thetas[k][i]`: angle of marker `i` at `times[k]`.
    pub thetas: Vec<Vec<f64>>,
    /// `actions[k][i]`: action of marker `i` at `times[k]`.
    pub actions: Vec<Vec<f64>>,
    /// Squared angular momenta (conserved; one entry per marker).
    pub ell: Vec<f64>,
    /// Quadrature weights (never mutated).
    pub w: Vec<f64>,
    /// Density values (never mutated).
    pub g: Vec<f64>,
    /// Tangent snapshots aligned with `times`, when the tangent flow ran.
    pub tangents: Option<Vec<Vec<TangentState>>>,
    /// Support margin at each recorded time.
    pub support_margins: Vec<f64>,
}

impl History {
    /// Number of markers.
    pub fn n_markers(&self) -> usize {
        self.ell.len()
    }

    /// Number of recorded times.
    pub fn n_times(&self) -> usize {
        self.times.len()
    }
}

/// Errors of integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DynError {
    /// Coordinate-map failure for marker `index`.
    Map {
        /// Marker position in the ensemble.
        index: usize,
        /// Underlying error.
        source: MapError,
    },
    /// Field construction failure.
    Field(FieldError),
    /// Marker `index` left the support region `D(delta/2)` at time `t`.
    SupportViolation {
        /// Marker position in the ensemble.
        index: usize,
        /// Its value of `a (2 + ell^2)^(1/4)`.
        value: f64,
        /// The threshold `delta / 2`.
        threshold: f64,
        /// Time of the violation.
        t: f64,
    },
    /// Inconsistent integration settings.
    BadSettings(&'static str),
    /// Inconsistent schedule (unsorted, out of range, or empty).
    BadSchedule(&'static str),
}

impl From<FieldError> for DynError {
    fn from(e: FieldError) -> Self {
        Self::Field(e)
    }
}

impl core::fmt::Display for DynError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::Map { index, source } => write!(f, "marker {index}: {source}"),
            Self::Field(e) => write!(f, "{e}"),
            Self::SupportViolation {
                index,
                value,
                threshold,
                t,
            } => write!(
                f,
                "marker {index} left the support region at t = {t}: \
                 a<ell>^(1/2) = {value} < {threshold} (eps too large for delta^2?)"
            ),
            Self::BadSettings(msg) => write!(f, "invalid settings: {msg}"),
            Self::BadSchedule(msg) => write!(f, "invalid schedule: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DynError {}

/// The support functional `a (2 + ell^2)^(1/4)` of one phase point.
#[inline]
fn support_value(a: f64, ell: f64) -> f64 {
    a * math::sqrt(japanese_bracket(ell))
}

/// Minimum over markers of `a (2 + ell^2)^(1/4) - delta/2`; `+inf` for an
/// empty slice. Nonnegative throughout any valid run.
pub fn support_margin(markers: &[Marker], delta: f64) -> f64 {
    let mut margin = f64::INFINITY;
    for mk in markers {
        let v = support_value(mk.a, mk.ell) - 0.5 * delta;
        if v < margin {
            margin = v;
        }
    }
    margin
}

impl Ensemble {
    /// Assembles an ensemble at `t = 0`, validating constants, regime
    /// parameters and initial support membership.
    ///
    /// # Errors
    ///
    /// [`DynError::BadSettings`] for inadmissible `eps`/`delta`;
    /// [`DynError::SupportViolation`] if any marker starts outside
    /// `D(delta/2)`.
    pub fn new(
        markers: Vec<Marker>,
        consts: PhysicalConstants,
        eps: f64,
        delta: f64,
    ) -> Result<Self, DynError> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(DynError::BadSettings("eps must be positive"));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(DynError::BadSettings("delta must be positive"));
        }
        let ens = Self {
            markers,
            consts,
            eps,
            delta,
            t: 0.0,
        };
        ens.check_support(0.0)?;
        Ok(ens)
    }

    /// Current support margin (see [`support_margin`]).
    pub fn support_margin(&self) -> f64 {
        support_margin(&self.markers, self.delta)
    }

    fn check_support(&self, t: f64) -> Result<(), DynError> {
        let threshold = 0.5 * self.delta;
        for (index, mk) in self.markers.iter().enumerate() {
            let value = support_value(mk.a, mk.ell);
            // NaN-safe: any non-comparable value is a violation
            if !(value >= threshold) {
                return Err(DynError::SupportViolation {
                    index,
                    value,
                    threshold,
                    t,
                });
            }
        }
        Ok(())
    }
}

/// Per-marker output of one integrator stage: the canonical rates and
/// (when the tangent flow is on) the linearization matrix
/// `[d rate_theta/d theta, d rate_theta/d a; d rate_a/d theta, d rate_a/d a]`
/// stored row-major. The matrix is exactly traceless: both diagonal
/// entries are the same mixed partial of the stage potential with opposite
/// signs.
#[derive(Debug, Clone, Copy)]
struct StageEval {
    k_theta: f64,
    k_a: f64,
    coeff: [f64; 4],
}

const ZERO_EVAL: StageEval = StageEval {
    k_theta: 0.0,
    k_a: 0.0,
    coeff: [0.0; 4],
};

/// Immutable context of one stage evaluation.
struct StageCtx<'a> {
    consts: PhysicalConstants,
    view: &'a FieldView,
    t: f64,
    exclude_self: bool,
    with_tangents: bool,
    /// Mollification scale for the radial field derivative.
    dr_scale: f64,
}

fn force_from_mass(mass: f64, r: f64) -> f64 {
    if mass <= 0.0 {
        0.0
    } else {
        -mass / (r * r)
    }
}

fn eval_marker(ctx: &StageCtx<'_>, index: usize, mk: &Marker) -> Result<StageEval, DynError> {
    let lambda = ctx.consts.lambda;
    if lambda == 0.0 {
        return Ok(ZERO_EVAL);
    }
    let jet = shifted_radius(ctx.consts.m, &mk.phase(), ctx.t)
        .map_err(|source| DynError::Map { index, source })?;
    let own = if ctx.exclude_self { mk.mass() } else { 0.0 };
    // the marker's own radius satisfies r_own <= query iff query >= jet.r
    let mass_at = |r: f64| -> f64 {
        let mut mass = ctx.view.mass_within(r).expect("field query radius > 0");
        if jet.r <= r {
            mass -= own;
        }
        mass
    };
    let force = force_from_mass(mass_at(jet.r), jet.r);
    let k_theta = -lambda * force * jet.dr_da;
    let k_a = lambda * force * jet.dr_dtheta;
    if !ctx.with_tangents {
        return Ok(StageEval {
            k_theta,
            k_a,
            coeff: [0.0; 4],
        });
    }
    // Mollified d(F)/dr at the marker's radius; clamped so the stencil
    // stays on the positive axis.
    let delta_r = ctx.dr_scale.min(0.5 * jet.r);
    let f_plus = force_from_mass(mass_at(jet.r + delta_r), jet.r + delta_r);
    let f_minus = force_from_mass(mass_at(jet.r - delta_r), jet.r - delta_r);
    let df_dr = (f_plus - f_minus) / (2.0 * delta_r);
    // Second derivatives of the stage potential (whose gradient gives the
    // rates): psi_xy = -(dF/dr * dR/dx * dR/dy + F * d2R/dxdy).
    let psi_tt = -(df_dr * jet.dr_dtheta * jet.dr_dtheta + force * jet.d2r_dtheta2);
    let psi_ta = -(df_dr * jet.dr_dtheta * jet.dr_da + force * jet.d2r_dtheta_da);
    let psi_aa = -(df_dr * jet.dr_da * jet.dr_da + force * jet.d2r_da2);
    Ok(StageEval {
        k_theta,
        k_a,
        coeff: [
            lambda * psi_ta,
            lambda * psi_aa,
            -lambda * psi_tt,
            -lambda * psi_ta,
        ],
    })
}

/// Evaluates all markers of a stage, optionally chunked across threads.
/// The output vector is indexed by marker and identical for any thread
/// count (pure per-marker work, deterministic assembly).
fn eval_stage(ctx: &StageCtx<'_>, markers: &[Marker], threads: usize) -> Result<Vec<StageEval>, DynError> {
    #[cfg(feature = "std")]
    if threads > 1 && markers.len() > 1 {
        let n = markers.len();
        let workers = threads.min(n);
        let chunk = n.div_ceil(workers);
        let mut partials: Vec<Vec<Result<StageEval, DynError>>> = Vec::with_capacity(workers);
        std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(workers);
            for j in 0..workers {
                let lo = j * chunk;
                let hi = (lo + chunk).min(n);
                let slice = &markers[lo..hi];
                handles.push(scope.spawn(move || {
                    slice
                        .iter()
                        .enumerate()
                        .map(|(off, mk)| eval_marker(ctx, lo + off, mk))
                        .collect::<Vec<_>>()
                }));
            }
            for h in handles {
                partials.push(h.join().expect("stage worker panicked"));
            }
        });
        let mut out = Vec::with_capacity(n);
        for part in partials {
            for item in part {
                out.push(item?);
            }
        }
        return Ok(out);
    }
    #[cfg(not(feature = "std"))]
    let _ = threads;
    markers
        .iter()
        .enumerate()
        .map(|(index, mk)| eval_marker(ctx, index, mk))
        .collect()
}

/// Scale summary of one stage: the largest rate magnitude, input to the
/// adaptive step policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// `max_i max(|dtheta_i/dt|, |da_i/dt|)` over the final stage.
    pub rate_scale: f64,
}

fn rate_scale_of(evals: &[StageEval]) -> f64 {
    let mut scale = 0.0_f64;
    for e in evals {
        let m = math::abs(e.k_theta).max(math::abs(e.k_a));
        if m > scale {
            scale = m;
        }
    }
    scale
}

fn check_settings(settings: &StepSettings) -> Result<(), DynError> {
    if !(settings.dt_max.is_finite() && settings.dt_max > 0.0) {
        return Err(DynError::BadSettings("dt_max must be positive"));
    }
    if !(settings.c_cfl.is_finite() && settings.c_cfl > 0.0) {
        return Err(DynError::BadSettings("c_cfl must be positive"));
    }
    if settings.threads == 0 {
        return Err(DynError::BadSettings("threads must be >= 1"));
    }
    Ok(())
}

/// Advances the ensemble (and optionally per-marker tangents) by one
/// explicit midpoint step of size `dt`.
///
/// Stage one evaluates rates against the field at `t`; stage two rebuilds
/// the field from the half-advanced ensemble at `t + dt/2` and completes
/// the update. `ell`, `w`, `g` are never touched. Post-step, support
/// membership in `D(delta/2)` is re-checked.
///
/// # Errors
///
/// See [`DynError`]; on error the ensemble may hold the partially-updated
/// state and should be discarded.
pub fn step(
    ens: &mut Ensemble,
    mut tangents: Option<&mut [TangentState]>,
    dt: f64,
    settings: &StepSettings,
) -> Result<StepInfo, DynError> {
    check_settings(settings)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynError::BadSettings("dt must be positive"));
    }
    if let Some(ref tg) = tangents {
        if tg.len() != ens.markers.len() {
            return Err(DynError::BadSettings("one tangent per marker required"));
        }
    }
    let with_tangents = tangents.is_some();
    let n = ens.markers.len();
    let dr_scale = |t: f64| (1.0 + t) / math::sqrt(n.max(1) as f64);

    // Stage 1: field and rates at t.
    let view1 = build_field_view(ens.consts.m, &ens.markers, ens.t)?;
    let ctx1 = StageCtx {
        consts: ens.consts,
        view: &view1,
        t: ens.t,
        exclude_self: settings.exclude_self,
        with_tangents,
        dr_scale: dr_scale(ens.t),
    };
    let k1 = eval_stage(&ctx1, &ens.markers, settings.threads)?;

    // Half-advanced ensemble at t + dt/2.
    let half_t = ens.t + 0.5 * dt;
    let mut half = ens.markers.clone();
    for (mk, e) in half.iter_mut().zip(&k1) {
        mk.theta += 0.5 * dt * e.k_theta;
        mk.a += 0.5 * dt * e.k_a;
    }

    // Stage 2: field and rates at the midpoint.
    let view2 = build_field_view(ens.consts.m, &half, half_t)?;
    let ctx2 = StageCtx {
        consts: ens.consts,
        view: &view2,
        t: half_t,
        exclude_self: settings.exclude_self,
        with_tangents,
        dr_scale: dr_scale(half_t),
    };
    let k2 = eval_stage(&ctx2, &half, settings.threads)?;

    for (mk, e) in ens.markers.iter_mut().zip(&k2) {
        mk.theta += dt * e.k_theta;
        mk.a += dt * e.k_a;
    }
    ens.t += dt;

    if let Some(ref mut tg) = tangents {
        // J_{n+1} = [I + dt A_half (I + dt/2 A_t)] J_n — exactly the
        // Jacobian of the position update above with the stage fields
        // treated as external.
        for i in 0..n {
            let j = tg[i];
            let a1 = &k1[i].coeff;
            let a2 = &k2[i].coeff;
            let h1_theta = j.d_theta_da + 0.5 * dt * (a1[0] * j.d_theta_da + a1[1] * j.d_a_da);
            let h1_a = j.d_a_da + 0.5 * dt * (a1[2] * j.d_theta_da + a1[3] * j.d_a_da);
            tg[i] = TangentState {
                d_theta_da: j.d_theta_da + dt * (a2[0] * h1_theta + a2[1] * h1_a),
                d_a_da: j.d_a_da + dt * (a2[2] * h1_theta + a2[3] * h1_a),
            };
        }
    }

    ens.check_support(ens.t)?;
    Ok(StepInfo {
        rate_scale: rate_scale_of(&k2),
    })
}

fn policy_dt(t: f64, rate_scale: f64, settings: &StepSettings) -> f64 {
    if rate_scale <= 0.0 {
        settings.dt_max
    } else {
        settings.dt_max.min(settings.c_cfl * (1.0 + t) / rate_scale)
    }
}

/// Integrates the ensemble to `schedule.t_end`, recording snapshots at the
/// scheduled times (which must start at or after the current time and be
/// strictly increasing; the last must equal `t_end`).
///
/// The step size follows `min(dt_max, c_cfl (1+t)/rate_scale)` with the
/// rate scale taken from the previous step (forces decay, steps may grow),
/// truncated to land exactly on record times. With `with_tangents`, the
/// tangent flow starts from the identity and its snapshots are stored
/// alongside the positions.
///
/// # Errors
///
/// Propagates [`step`] errors; rejects malformed schedules.
pub fn run(
    ens: &mut Ensemble,
    schedule: &Schedule,
    settings: &StepSettings,
    with_tangents: bool,
) -> Result<History, DynError> {
    check_settings(settings)?;
    if schedule.record_times.is_empty() {
        return Err(DynError::BadSchedule("no record times"));
    }
    if !schedule
        .record_times
        .windows(2)
        .all(|pair| pair[0] < pair[1])
    {
        return Err(DynError::BadSchedule("record times must strictly increase"));
    }
    if schedule.record_times[0] < ens.t {
        return Err(DynError::BadSchedule("record times precede current time"));
    }
    if *schedule.record_times.last().expect("nonempty") != schedule.t_end {
        return Err(DynError::BadSchedule("last record time must equal t_end"));
    }

    let n = ens.markers.len();
    let mut tangents: Option<Vec<TangentState>> =
        with_tangents.then(|| alloc::vec![TangentState::identity(); n]);

    let mut history = History {
        consts: ens.consts,
        eps: ens.eps,
        delta: ens.delta,
        times: Vec::with_capacity(schedule.record_times.len()),
        thetas: Vec::with_capacity(schedule.record_times.len()),
        actions: Vec::with_capacity(schedule.record_times.len()),
        ell: ens.markers.iter().map(|mk| mk.ell).collect(),
        w: ens.markers.iter().map(|mk| mk.w).collect(),
        g: ens.markers.iter().map(|mk| mk.g).collect(),
        tangents: with_tangents.then(Vec::new),
        support_margins: Vec::with_capacity(schedule.record_times.len()),
    };

    // Initial rate scale for the step policy (one extra stage evaluation;
    // skipped in the free-streaming case).
    let mut rate_scale = if ens.consts.lambda == 0.0 || n == 0 {
        0.0
    } else {
        let view = build_field_view(ens.consts.m, &ens.markers, ens.t)?;
        let ctx = StageCtx {
            consts: ens.consts,
            view: &view,
            t: ens.t,
            exclude_self: settings.exclude_self,
            with_tangents: false,
            dr_scale: 1.0,
        };
        rate_scale_of(&eval_stage(&ctx, &ens.markers, settings.threads)?)
    };

    for &target in &schedule.record_times {
        loop {
            let remaining = target - ens.t;
            if remaining <= 0.0 {
                break;
            }
            let dt = policy_dt(ens.t, rate_scale, settings);
            if remaining <= dt {
                let info = step(ens, tangents.as_deref_mut(), remaining, settings)?;
                rate_scale = info.rate_scale;
                break;
            }
            let info = step(ens, tangents.as_deref_mut(), dt, settings)?;
            rate_scale = info.rate_scale;
        }
        // land exactly on the record time (the final partial step above
        // reaches it up to one rounding ulp)
        ens.t = target;

        history.times.push(target);
        history
            .thetas
            .push(ens.markers.iter().map(|mk| mk.theta).collect());
        history
            .actions
            .push(ens.markers.iter().map(|mk| mk.a).collect());
        history.support_margins.push(ens.support_margin());
        if let (Some(ref mut snaps), Some(ref tg)) = (&mut history.tangents, &tangents) {
            snaps.push(tg.clone());
        }
    }
    Ok(history)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::moment_norm;
    use crate::field::{MomentSpec, NormKind};
    use approx::assert_relative_eq;

    const CONSTS: PhysicalConstants = PhysicalConstants { m: 1.0, lambda: 1.0 };

    fn marker(theta: f64, a: f64, ell: f64, w: f64, g: f64) -> Marker {
        Marker { theta, a, ell, w, g }
    }

    fn two_body() -> Ensemble {
        Ensemble::new(
            alloc::vec![
                marker(-0.4, 1.2, 1.0, 0.5, 0.3),
                marker(0.7, 1.6, 1.4, 0.5, 0.4),
            ],
            CONSTS,
            0.05,
            0.5,
        )
        .unwrap()
    }

    fn sup_distance(x: &Ensemble, y: &Ensemble) -> f64 {
        x.markers
            .iter()
            .zip(&y.markers)
            .map(|(p, q)| (p.theta - q.theta).abs().max((p.a - q.a).abs()))
            .fold(0.0, f64::max)
    }

    /// Advance a clone of `ens` to `t_end` with fixed step `dt`.
    fn advance(ens: &Ensemble, t_end: f64, dt: f64, settings: &StepSettings) -> Ensemble {
        let mut out = ens.clone();
        while out.t < t_end - 1e-12 {
            let h = dt.min(t_end - out.t);
            step(&mut out, None, h, settings).unwrap();
        }
        out.t = t_end;
        out
    }

    #[test]
    fn zero_coupling_markers_are_fixed_points() {
        let mut ens = two_body();
        ens.consts.lambda = 0.0;
        let before = ens.markers.clone();
        for _ in 0..50 {
            step(&mut ens, None, 0.05, &StepSettings::default()).unwrap();
        }
        // bit-exact: the free flow is absorbed by the shifted variables
        assert_eq!(ens.markers, before);
        assert_relative_eq!(ens.t, 2.5, max_relative = 1e-12);
    }

    #[test]
    fn single_marker_with_self_exclusion_is_fixed_point() {
        let mut ens = Ensemble::new(
            alloc::vec![marker(0.3, 1.2, 1.0, 1.0, 0.3)],
            CONSTS,
            0.05,
            0.5,
        )
        .unwrap();
        let settings = StepSettings {
            exclude_self: true,
            ..StepSettings::default()
        };
        let before = ens.markers.clone();
        for _ in 0..20 {
            step(&mut ens, None, 0.05, &settings).unwrap();
        }
        assert_eq!(ens.markers, before);
        // without exclusion the same marker moves (drifts through the
        // self-term), pinning that the toggle changes the dynamics
        let mut incl = Ensemble::new(before.clone(), CONSTS, 0.05, 0.5).unwrap();
        for _ in 0..5 {
            step(&mut incl, None, 0.05, &StepSettings::default()).unwrap();
        }
        assert!(sup_distance(&incl, &ens) > 0.0);
    }

    #[test]
    fn statics_conserved_bit_exactly() {
        let mut ens = two_body();
        let ell0: Vec<f64> = ens.markers.iter().map(|mk| mk.ell).collect();
        let w0: Vec<f64> = ens.markers.iter().map(|mk| mk.w).collect();
        let g0: Vec<f64> = ens.markers.iter().map(|mk| mk.g).collect();
        let mass0: f64 = ens.markers.iter().map(Marker::mass).sum();
        for _ in 0..100 {
            step(&mut ens, None, 0.02, &StepSettings::default()).unwrap();
        }
        for (i, mk) in ens.markers.iter().enumerate() {
            assert_eq!(mk.ell, ell0[i]);
            assert_eq!(mk.w, w0[i]);
            assert_eq!(mk.g, g0[i]);
        }
        let mass1: f64 = ens.markers.iter().map(Marker::mass).sum();
        assert_eq!(mass0, mass1);
    }

    #[test]
    fn step_halving_matches_reference() {
        // dt = 1e-2 vs a dt = 1e-3 reference over t in [0, 10]
        let ens = two_body();
        let settings = StepSettings::default();
        let coarse = advance(&ens, 10.0, 1e-2, &settings);
        let fine = advance(&ens, 10.0, 1e-3, &settings);
        assert!(
            sup_distance(&coarse, &fine) <= 1e-4,
            "sup distance {}",
            sup_distance(&coarse, &fine)
        );
    }

    #[test]
    fn richardson_order_at_least_two() {
        let ens = two_body();
        let settings = StepSettings::default();
        let reference = advance(&ens, 4.0, 2.5e-4, &settings);
        let errs: Vec<f64> = [8e-3, 4e-3, 2e-3]
            .iter()
            .map(|&dt| sup_distance(&advance(&ens, 4.0, dt, &settings), &reference))
            .collect();
        let order1 = (errs[0] / errs[1]).log2();
        let order2 = (errs[1] / errs[2]).log2();
        assert!(
            order1 > 1.7 && order2 > 1.7,
            "observed orders {order1}, {order2} (errors {errs:?})"
        );
    }

    #[test]
    fn one_step_jacobian_defect_is_third_order() {
        // Evolve the two canonical tangent vectors through a single step
        // and measure |det - 1|; explicit midpoint on a divergence-free
        // field is volume preserving to O(dt^3).
        let ens = two_body();
        let settings = StepSettings::default();
        let det_defect = |dt: f64| -> f64 {
            let mut e1 = ens.clone();
            let mut tg1 = alloc::vec![
                TangentState { d_theta_da: 1.0, d_a_da: 0.0 };
                ens.markers.len()
            ];
            step(&mut e1, Some(&mut tg1), dt, &settings).unwrap();
            let mut e2 = ens.clone();
            let mut tg2 = alloc::vec![TangentState::identity(); ens.markers.len()];
            step(&mut e2, Some(&mut tg2), dt, &settings).unwrap();
            tg1.iter()
                .zip(&tg2)
                .map(|(c1, c2)| {
                    // columns of the one-step Jacobian
                    (c1.d_theta_da * c2.d_a_da - c2.d_theta_da * c1.d_a_da - 1.0).abs()
                })
                .fold(0.0, f64::max)
        };
        let d1 = det_defect(0.4);
        let d2 = det_defect(0.2);
        let d3 = det_defect(0.1);
        let o1 = (d1 / d2).log2();
        let o2 = (d2 / d3).log2();
        assert!(
            o1 > 2.5 && o2 > 2.5,
            "volume defect orders {o1}, {o2} (defects {d1}, {d2}, {d3})"
        );
    }

    #[test]
    fn tangent_flow_constant_at_zero_coupling() {
        let mut ens = two_body();
        ens.consts.lambda = 0.0;
        let mut tg = alloc::vec![TangentState::identity(); ens.markers.len()];
        for _ in 0..10 {
            step(&mut ens, Some(&mut tg), 0.1, &StepSettings::default()).unwrap();
        }
        for t in &tg {
            assert_eq!(*t, TangentState::identity());
        }
    }

    #[test]
    fn tangent_matches_twin_run_finite_difference() {
        // One self-excluded point source (an exact fixed point, so the
        // field seen by everything else is smooth in time) plus a massless
        // tracer whose radius stays well above the source radius — the
        // force along the tracer orbit is then a smooth function and the
        // mollified field derivative inside the tangent flow converges.
        // Massless padding markers shrink the mollification stencil
        // (1 + t)/sqrt(N) without altering the field. The tracer's tangent
        // must match central differences of twin runs with its initial
        // action displaced. The source mass is kept small enough that the
        // decelerating tracer's action never sinks to the source's (a
        // radius crossing would be a genuine discontinuity of the force).
        let source = marker(0.0, 1.0, 0.5, 0.5, 0.3);
        let tracer = marker(0.2, 1.4, 1.2, 1.0, 0.0);
        let h = 1e-5;
        let build = |da: f64| -> Ensemble {
            let mut mks = alloc::vec![source];
            let mut tr = tracer;
            tr.a += da;
            mks.push(tr);
            for _ in 0..899 {
                mks.push(tracer);
            }
            Ensemble::new(mks, CONSTS, 0.05, 0.5).unwrap()
        };
        let settings = StepSettings {
            exclude_self: true,
            ..StepSettings::default()
        };
        let schedule = Schedule {
            t_end: 5.0,
            record_times: alloc::vec![5.0],
        };
        let mut center = build(0.0);
        let hist = run(&mut center, &schedule, &settings, true).unwrap();
        let tangent = hist.tangents.as_ref().unwrap()[0][1];

        let mut plus = build(h);
        run(&mut plus, &schedule, &settings, false).unwrap();
        let mut minus = build(-h);
        run(&mut minus, &schedule, &settings, false).unwrap();
        let fd_theta = (plus.markers[1].theta - minus.markers[1].theta) / (2.0 * h);
        let fd_a = (plus.markers[1].a - minus.markers[1].a) / (2.0 * h);
        // non-vacuous: the source actually deflects the tracer
        assert!((center.markers[1].theta - tracer.theta).abs() > 1e-3);
        assert!(
            (tangent.d_theta_da - fd_theta).abs() <= 1e-3 * fd_theta.abs().max(1.0),
            "d_theta_da {} vs fd {fd_theta}",
            tangent.d_theta_da
        );
        assert!(
            (tangent.d_a_da - fd_a).abs() <= 1e-3 * fd_a.abs().max(1.0),
            "d_a_da {} vs fd {fd_a}",
            tangent.d_a_da
        );
        // the action tangent stays near its free value 1
        assert!((tangent.d_a_da - 1.0).abs() < 0.5);
    }

    #[test]
    fn support_violation_reported() {
        // delta chosen so the marker starts barely inside the region; on
        // the outgoing branch (theta > 0 keeps growing) the self-force
        // (deliberately out of the perturbative regime at unit mass)
        // decelerates the marker, drags its action down and trips the check
        let mks = alloc::vec![marker(2.0, 0.519, 1.0, 1.0, 1.0)];
        // support value of marker 0: 0.519 * (2 + 1)^(1/4) = 0.68304..
        let delta = 2.0 * 0.6829;
        let mut ens = Ensemble::new(mks, CONSTS, 0.05, delta).unwrap();
        let mut violated = false;
        for _ in 0..4000 {
            match step(&mut ens, None, 0.05, &StepSettings::default()) {
                Ok(_) => {}
                Err(DynError::SupportViolation { index, t, .. }) => {
                    assert_eq!(index, 0);
                    assert!(t > 0.0);
                    violated = true;
                    break;
                }
                Err(other) => panic!("unexpected error {other:?}"),
            }
        }
        assert!(violated, "expected a support violation");
    }

    #[test]
    fn run_records_schedule_and_zero_duration() {
        let mut ens = two_body();
        let schedule = Schedule {
            t_end: 0.0,
            record_times: alloc::vec![0.0],
        };
        let before = ens.markers.clone();
        let hist = run(&mut ens, &schedule, &StepSettings::default(), false).unwrap();
        assert_eq!(ens.markers, before);
        assert_eq!(hist.times, alloc::vec![0.0]);
        assert_eq!(hist.thetas[0][1], before[1].theta);

        let schedule = Schedule {
            t_end: 1.0,
            record_times: alloc::vec![0.0, 0.25, 0.5, 1.0],
        };
        let hist = run(&mut ens, &schedule, &StepSettings::default(), false).unwrap();
        assert_eq!(hist.times, alloc::vec![0.0, 0.25, 0.5, 1.0]);
        assert_eq!(ens.t, 1.0);
        assert_eq!(hist.n_markers(), 2);
        assert!(hist.support_margins.iter().all(|&m| m >= 0.0));
        // recorded actions change only at rounding scale over dt, but the
        // snapshots must match the live ensemble at the end
        assert_eq!(hist.actions.last().unwrap()[0], ens.markers[0].a);

        // malformed schedules are rejected
        assert!(matches!(
            run(
                &mut ens.clone(),
                &Schedule { t_end: 2.0, record_times: alloc::vec![] },
                &StepSettings::default(),
                false
            ),
            Err(DynError::BadSchedule(_))
        ));
        assert!(matches!(
            run(
                &mut ens.clone(),
                &Schedule { t_end: 2.0, record_times: alloc::vec![1.5, 1.4, 2.0] },
                &StepSettings::default(),
                false
            ),
            Err(DynError::BadSchedule(_))
        ));
    }

    #[test]
    fn moments_bounded_along_short_run() {
        // sanity: a short self-consistent run keeps the configured moment
        // norm finite and near its initial value (weights conserved,
        // positions drift slowly)
        let mut ens = two_body();
        let spec = MomentSpec { j_ell: 1, j_ell_inv: 1, j_a: 1, j_theta: 1 };
        let before = moment_norm(&ens.markers, &spec, NormKind::Sup);
        let schedule = Schedule {
            t_end: 5.0,
            record_times: alloc::vec![0.0, 5.0],
        };
        run(&mut ens, &schedule, &StepSettings::default(), false).unwrap();
        let after = moment_norm(&ens.markers, &spec, NormKind::Sup);
        assert!(after.is_finite());
        assert!((after - before).abs() <= 0.2 * before);
    }

    #[cfg(feature = "std")]
    #[test]
    fn threaded_stage_is_bit_identical() {
        let base = {
            let mut mks = Vec::new();
            for i in 0..37 {
                let fi = i as f64;
                mks.push(marker(
                    -3.0 + 0.2 * fi,
                    1.0 + 0.02 * fi,
                    0.8 + 0.03 * fi,
                    0.3,
                    0.2 + 0.01 * fi,
                ));
            }
            Ensemble::new(mks, CONSTS, 0.05, 0.5).unwrap()
        };
        let run_with = |threads: usize| -> (Vec<Marker>, Vec<TangentState>) {
            let mut ens = base.clone();
            let mut tg = alloc::vec![TangentState::identity(); ens.markers.len()];
            let settings = StepSettings {
                threads,
                ..StepSettings::default()
            };
            for _ in 0..10 {
                step(&mut ens, Some(&mut tg), 0.05, &settings).unwrap();
            }
            (ens.markers, tg)
        };
        let (m1, t1) = run_with(1);
        let (m4, t4) = run_with(4);
        let (m7, t7) = run_with(7);
        assert_eq!(m1, m4);
        assert_eq!(m1, m7);
        assert_eq!(t1, t4);
        assert_eq!(t1, t7);
    }

    #[test]
    fn ensemble_validation() {
        assert!(matches!(
            Ensemble::new(alloc::vec![], CONSTS, 0.0, 0.5),
            Err(DynError::BadSettings(_))
        ));
        assert!(matches!(
            Ensemble::new(alloc::vec![], CONSTS, 0.05, -1.0),
            Err(DynError::BadSettings(_))
        ));
        // marker outside D(delta/2) at construction
        assert!(matches!(
            Ensemble::new(
                alloc::vec![marker(0.0, 0.1, 1.0, 1.0, 1.0)],
                CONSTS,
                0.05,
                2.0
            ),
            Err(DynError::SupportViolation { .. })
        ));
        // support margin of the empty ensemble is +inf
        assert_eq!(support_margin(&[], 0.5), f64::INFINITY);
    }
}
