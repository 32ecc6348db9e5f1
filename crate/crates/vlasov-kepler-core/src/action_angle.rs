//! Action-angle coordinates for hyperbolic radial Kepler motion.
//!
//! The radial phase space `(r, v)` at fixed squared angular momentum
//! `ell > 0` is parametrized by asymptotic action-angle variables
//! `(theta, a)`:
//!
//! ```text
//! R(theta, a, ell) = p H_kappa(|theta|/p) - p kappa,
//! V(theta, a, ell) = sgn(theta) a sqrt(1 + m/(a^2 R) - ell/(a^2 R^2)),
//! ```
//!
//! with orbit parameters `kappa, p` from [`crate::kepler`]. The map is
//! exactly canonical (`dR ^ dV = dtheta ^ da`), `theta = 0` is periapsis
//! (`R = r0`, `V = 0`), `theta < 0` the incoming and `theta > 0` the
//! outgoing branch. Its inverse is
//!
//! ```text
//! a     = sqrt(v^2 - m/r + ell/r^2)        (hyperbolicity: the root exists),
//! theta = sgn(v) p G_kappa(r/p + kappa).
//! ```
//!
//! In these variables the exact point-mass dynamics is the free translation
//! `theta -> theta + a t`, so the time-shifted radius `Rt(theta, a) =
//! R(theta + a t, a)` converts angle translations back to physical radii.
//! [`radial_jet`] and [`shifted_radius`] return `R` together with all first
//! and second derivatives in `(theta, a)`; these jets are the only
//! derivative source used by the force evaluation and the tangent flow, so
//! a single `H_kappa` solve per evaluation suffices.
//!
//! Useful identities (each verified against finite differences in the test
//! suite):
//!
//! * `dR/dtheta = V / a` — the angle derivative *is* the scaled velocity;
//! * `d2R/dtheta2 = (ell/R - m/2) / (a^2 R^2)` — the radial equation of
//!   motion in disguise (`theta' = a` along orbits);
//! * `dR/da < 0` — radii shrink as the asymptotic speed grows at fixed
//!   angle, strictly, which drives the averaging estimates downstream.
//!
//! [`kepler_ode_oracle`] integrates the radial equation of motion
//! `r' = v, v' = ell/r^3 - m/(2 r^2)` directly with a classical
//! fourth-order Runge-Kutta scheme and serves as an independent check that
//! the parametric trajectory formulas above solve the actual ODE.

use crate::kepler::{
    arcosh_from_u, derive_params, g_from_omk_u, h_m1_from_omk, KeplerError, KeplerParams,
};
use crate::math;

/// A phase-space point in action-angle coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseAA {
    /// Asymptotic angle (arc-length along the orbit); `0` at periapsis.
    pub theta: f64,
    /// Asymptotic radial speed, `a > 0`.
    pub a: f64,
    /// Conserved squared angular momentum, `ell > 0`.
    pub ell: f64,
}

/// A phase-space point in physical radial coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhasePhys {
    /// Radius, `r > 0`.
    pub r: f64,
    /// Radial velocity.
    pub v: f64,
    /// Conserved squared angular momentum, `ell > 0`.
    pub ell: f64,
}

/// Radius value with its full second-order jet in `(theta, a)`.
///
/// For the time-shifted variant the derivatives are those of
/// `Rt(theta, a) = R(theta + a t, a)`, i.e. they include the shear terms
/// from the `a`-dependence of the shifted angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialJet {
    /// Radius `R > 0`.
    pub r: f64,
    /// `dR/dtheta` (equals `V/a`).
    pub dr_dtheta: f64,
    /// `dR/da`, strictly negative for the unshifted map.
    pub dr_da: f64,
    /// `d2R/dtheta2 = (ell/R - m/2)/(a^2 R^2)`.
    pub d2r_dtheta2: f64,
    /// Mixed derivative `d2R/(dtheta da)`.
    pub d2r_dtheta_da: f64,
    /// `d2R/da2`.
    pub d2r_da2: f64,
    /// Set when the evaluation point sits exactly on `theta = 0`, where the
    /// odd-order angle derivatives take their symmetric-limit value `0`
    /// under the `sgn(0) = +1` convention.
    pub on_axis: bool,
}

/// Errors of the coordinate maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapError {
    /// Parameter derivation or profile inversion failed.
    Kepler(KeplerError),
    /// The physical point has non-positive asymptotic energy;
    /// carries `h_lin = (v^2 - m/r + ell/r^2)/2 <= 0`.
    NotHyperbolic {
        /// Offending linearized energy.
        h_lin: f64,
    },
    /// Radius was non-positive or non-finite.
    NonPositiveRadius(f64),
    /// Radius fell below the periapsis of its own derived orbit by more
    /// than rounding slack (cannot occur for consistent inputs).
    RadiusBelowPeriapsis {
        /// Queried radius.
        r: f64,
        /// Periapsis of the derived orbit.
        r0: f64,
    },
}

impl From<KeplerError> for MapError {
    fn from(e: KeplerError) -> Self {
        Self::Kepler(e)
    }
}

impl core::fmt::Display for MapError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::Kepler(e) => write!(f, "{e}"),
            Self::NotHyperbolic { h_lin } => {
                write!(f, "point is not on a scattering orbit (h_lin = {h_lin})")
            }
            Self::NonPositiveRadius(r) => write!(f, "radius must be positive, got {r}"),
            Self::RadiusBelowPeriapsis { r, r0 } => {
                write!(f, "radius {r} below derived periapsis {r0}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MapError {}

/// Shared per-point evaluation: parameters, profile solve and the
/// first-order slope `W = |dR/dtheta| = sqrt(u(u+2)) / (u + (1-kappa))`.
struct BaseEval {
    kp: KeplerParams,
    /// Scaled angle `|theta|/p`.
    x: f64,
    /// Branch sign, `sgn(theta)` with `sgn(0) = +1`.
    sg: f64,
    /// `H_kappa(x) - 1 >= 0`.
    u: f64,
    /// `sqrt(u (u + 2)) = sqrt(H^2 - 1)`.
    su: f64,
    /// `u + (1 - kappa) = H - kappa > 0`.
    denom: f64,
    /// Radius `R = p (u + (1 - kappa))`.
    r: f64,
    /// `|dR/dtheta|`.
    w: f64,
}

fn base_eval(m: f64, q: &PhaseAA) -> Result<BaseEval, MapError> {
    let kp = derive_params(m, q.a, q.ell)?;
    let x = math::abs(q.theta) / kp.p;
    let sg = math::sgn_pos(q.theta);
    let u = h_m1_from_omk(kp.one_minus_kappa(), x)?;
    let su = math::sqrt(u * (u + 2.0));
    let denom = u + kp.one_minus_kappa();
    let r = kp.p * denom;
    let w = su / denom;
    Ok(BaseEval {
        kp,
        x,
        sg,
        u,
        su,
        denom,
        r,
        w,
    })
}

/// Maps action-angle coordinates to physical radial coordinates.
///
/// `r` is even and `v` odd in `theta`; `theta = 0` lands on periapsis
/// (`r = r0`, `v = 0`).
///
/// # Errors
///
/// Propagates parameter/solver errors for inadmissible `(a, ell)`.
pub fn to_phys(m: f64, q: &PhaseAA) -> Result<PhasePhys, MapError> {
    let be = base_eval(m, q)?;
    Ok(PhasePhys {
        r: be.r,
        v: be.sg * q.a * be.w,
        ell: q.ell,
    })
}

/// Maps physical radial coordinates to action-angle coordinates.
///
/// # Errors
///
/// [`MapError::NotHyperbolic`] when `v^2 - m/r + ell/r^2 <= 0` (the point
/// does not lie on a scattering orbit), plus domain errors for `r <= 0` or
/// `ell <= 0`.
pub fn to_aa(m: f64, x: &PhasePhys) -> Result<PhaseAA, MapError> {
    if !(x.r.is_finite() && x.r > 0.0) {
        return Err(MapError::NonPositiveRadius(x.r));
    }
    let asq = x.v * x.v - m / x.r + x.ell / (x.r * x.r);
    if !(asq.is_finite() && asq > 0.0) {
        return Err(MapError::NotHyperbolic { h_lin: 0.5 * asq });
    }
    let a = math::sqrt(asq);
    let kp = derive_params(m, a, x.ell)?;
    // u_y = (r - r0)/p = r/p + kappa - 1, cancellation-free near periapsis.
    let mut u_y = (x.r - kp.r0) / kp.p;
    if u_y < 0.0 {
        // v^2 >= 0 forces r >= r0 exactly; allow rounding-level slack only.
        if u_y >= -1e-12 * (1.0 + x.r / kp.p) {
            u_y = 0.0;
        } else {
            return Err(MapError::RadiusBelowPeriapsis { r: x.r, r0: kp.r0 });
        }
    }
    let theta = math::sgn_pos(x.v) * kp.p * g_from_omk_u(kp.one_minus_kappa(), u_y);
    Ok(PhaseAA {
        theta,
        a,
        ell: x.ell,
    })
}

/// Full second-order jet of `R(theta, a)` at fixed `ell`.
///
/// All derivative formulas are closed-form chain rules through the profile
/// solve; no finite differencing and only one `H_kappa` inversion are
/// involved. At `theta = 0` the odd angle derivatives vanish by symmetry
/// and `on_axis` is set.
///
/// # Errors
///
/// Propagates parameter/solver errors.
pub fn radial_jet(m: f64, q: &PhaseAA) -> Result<RadialJet, MapError> {
    let be = base_eval(m, q)?;
    Ok(jet_from_base(m, q.a, q.ell, &be))
}

fn jet_from_base(m: f64, a: f64, ell: f64, be: &BaseEval) -> RadialJet {
    let kp = &be.kp;
    let kappa = kp.kappa;
    let omk = kp.one_minus_kappa();
    let p = kp.p;
    let (u, su, denom) = (be.u, be.su, be.denom);
    let h = 1.0 + u;
    let r = be.r;

    // Parameter derivatives in a. 1 - kappa^2 = omk (1 + kappa) keeps the
    // kappa -> 1 regime cancellation-free.
    let om_k2 = omk * (1.0 + kappa);
    let dkappa = -kappa * om_k2 / a;
    let dp = -p * (1.0 + kappa * kappa) / a;
    let d2kappa = kappa * om_k2 * (2.0 - 3.0 * kappa * kappa) / (a * a);
    let opk2 = 1.0 + kappa * kappa;
    let d2p = p / (a * a) * (opk2 + opk2 * opk2 + 2.0 * kappa * kappa * om_k2);

    // Chain rule through H(|theta|/p(a); kappa(a)):
    //   dH/da = W xi,   xi = -x dp/p + arcosh(H) dkappa,
    // with W = dG/dy^{-1} = su/denom. All expressions below are arranged so
    // no 1/su appears (su -> 0 at periapsis is an interior point of the
    // formulas, not a singularity).
    let ach = arcosh_from_u(u);
    let xi = -be.x * dp / p + ach * dkappa;
    let dh = su * xi / denom;
    let dr_da = dp * denom + p * (dh - dkappa);

    // d2R/dtheta2 is the radial equation of motion in disguise.
    let d2r_dtheta2 = (ell / r - 0.5 * m) / (a * a * r * r);

    // dW/da with W_H dH/da collapsed: (1 - kappa H) xi / denom^3. The
    // leading factor is written as omk (1 + u) - u: the naive 1 - kappa H
    // inherits the absolute rounding of kappa (~1e-16), which near kappa = 1
    // with u ~ 1e-5 would be a ~1e-11 relative error in this factor.
    let one_m_kh = omk * h - u;
    let dw_da = one_m_kh * xi / (denom * denom * denom) + su * dkappa / (denom * denom);

    // d(xi)/da; d(arcosh H)/da = dH/su = xi/denom (cancellation-free).
    let dxi_da = -be.x * (d2p / p - 2.0 * (dp / p) * (dp / p)) + (xi / denom) * dkappa
        + ach * d2kappa;
    let d2h = dw_da * xi + (su / denom) * dxi_da;
    let d2r_da2 = d2p * denom + 2.0 * dp * (dh - dkappa) + p * (d2h - d2kappa);

    RadialJet {
        r,
        dr_dtheta: be.sg * be.w,
        dr_da,
        d2r_dtheta2,
        d2r_dtheta_da: be.sg * dw_da,
        d2r_da2,
        on_axis: be.x == 0.0,
    }
}

/// Jet of the time-shifted radius `Rt(theta, a) = R(theta + a t, a)`.
///
/// The base jet is evaluated at the shifted angle and the shear of the
/// shift enters through
///
/// ```text
/// dRt/da   = t dR/dtheta + dR/da,
/// d2Rt/da2 = t^2 d2R/dtheta2 + 2 t d2R/(dtheta da) + d2R/da2,
/// ```
///
/// (angle derivatives are unaffected). `t = 0` reproduces [`radial_jet`]
/// exactly.
///
/// # Errors
///
/// Propagates parameter/solver errors.
pub fn shifted_radius(m: f64, q: &PhaseAA, t: f64) -> Result<RadialJet, MapError> {
    let shifted = PhaseAA {
        theta: q.theta + q.a * t,
        a: q.a,
        ell: q.ell,
    };
    let base = radial_jet(m, &shifted)?;
    Ok(RadialJet {
        r: base.r,
        dr_dtheta: base.dr_dtheta,
        dr_da: t * base.dr_dtheta + base.dr_da,
        d2r_dtheta2: base.d2r_dtheta2,
        d2r_dtheta_da: t * base.d2r_dtheta2 + base.d2r_dtheta_da,
        d2r_da2: t * t * base.d2r_dtheta2 + 2.0 * t * base.d2r_dtheta_da + base.d2r_da2,
        on_axis: base.on_axis,
    })
}

/// Time-shifted radius value only (one profile solve, no derivative chain);
/// the cheap path for field construction.
///
/// # Errors
///
/// Propagates parameter/solver errors.
pub fn shifted_radius_value(m: f64, q: &PhaseAA, t: f64) -> Result<f64, MapError> {
    let shifted = PhaseAA {
        theta: q.theta + q.a * t,
        a: q.a,
        ell: q.ell,
    };
    base_eval(m, &shifted).map(|be| be.r)
}

/// Defect `|det J - 1|` of the (optionally time-shifted) map
/// `(theta, a) -> (R, V)` at fixed `ell`.
///
/// The Jacobian uses the exact identity `V = a dRt/dtheta`, so the `V` row
/// is assembled analytically from the radius jet (`dV/dtheta = a
/// d2Rt/dtheta2`, `dV/da = dRt/dtheta + a d2Rt/(dtheta da)`) without a
/// second profile solve. The map is canonical, so the defect measures pure
/// floating-point error; it degrades gracefully (documented by tests) only
/// in the ill-conditioned `kappa -> 1` regime.
///
/// # Errors
///
/// Propagates parameter/solver errors.
pub fn symplectic_defect(m: f64, q: &PhaseAA, t: f64) -> Result<f64, MapError> {
    let jet = shifted_radius(m, q, t)?;
    let dv_dtheta = q.a * jet.d2r_dtheta2;
    let dv_da = jet.dr_dtheta + q.a * jet.d2r_dtheta_da;
    let det = jet.dr_dtheta * dv_da - jet.dr_da * dv_dtheta;
    Ok(math::abs(det - 1.0))
}

// ---------------------------------------------------------------------------
// Direct ODE oracle
// ---------------------------------------------------------------------------

/// Result of a direct radial-ODE integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeSolution {
    /// Final state at `t_end`.
    pub state: PhasePhys,
    /// Accepted Runge-Kutta steps.
    pub steps: usize,
    /// Smallest radius visited (periapsis tracking).
    pub min_radius: f64,
}

/// Errors of the direct ODE integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeError {
    /// `dt` was non-positive or non-finite.
    BadStep(f64),
    /// State or `ell` inadmissible at entry.
    BadState,
    /// The adaptive sub-step controller collapsed below `1e-12 * dt`
    /// (approaching the singular axis `r -> 0`).
    StepUnderflow {
        /// Time at which the controller gave up.
        t: f64,
        /// Radius there.
        r: f64,
    },
    /// The radius left the positive axis (integration error blow-up).
    NonPositiveRadius {
        /// Time of the event.
        t: f64,
    },
}

impl core::fmt::Display for OdeError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::BadStep(dt) => write!(f, "step size must be positive, got {dt}"),
            Self::BadState => write!(f, "inadmissible initial state"),
            Self::StepUnderflow { t, r } => {
                write!(f, "sub-step underflow at t = {t}, r = {r}")
            }
            Self::NonPositiveRadius { t } => write!(f, "radius became non-positive at t = {t}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for OdeError {}

/// Integrates the radial equation of motion directly:
/// `r' = v`, `v' = ell/r^3 - m/(2 r^2)`, from `t = 0` to `t = t_end`
/// (either sign), with base step `dt > 0`.
///
/// Classical RK4 with a conservative sub-step controller: near periapsis
/// the step shrinks to a fixed fraction of the local dynamical time
/// `r / sqrt(v^2 + ell/r^2 + m/r)`. This integrator is deliberately
/// independent of the action-angle machinery and serves as the trajectory
/// oracle for it.
///
/// # Errors
///
/// See [`OdeError`].
pub fn kepler_ode_oracle(
    m: f64,
    x0: &PhasePhys,
    t_end: f64,
    dt: f64,
) -> Result<OdeSolution, OdeError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(OdeError::BadStep(dt));
    }
    if !(x0.r.is_finite() && x0.r > 0.0 && x0.v.is_finite() && x0.ell > 0.0 && t_end.is_finite()) {
        return Err(OdeError::BadState);
    }
    let ell = x0.ell;
    let accel = |r: f64| ell / (r * r * r) - 0.5 * m / (r * r);
    let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
    let mut t = 0.0_f64;
    let mut r = x0.r;
    let mut v = x0.v;
    let mut steps = 0usize;
    let mut min_radius = r;
    while dir * (t_end - t) > 0.0 {
        if !(r > 0.0) {
            return Err(OdeError::NonPositiveRadius { t });
        }
        // dynamical-time sub-step control; 0.2 is a conservative fraction
        let speed = math::sqrt(v * v + ell / (r * r) + m / r);
        let mut h = dt.min(0.2 * r / speed);
        if h < 1e-12 * dt {
            return Err(OdeError::StepUnderflow { t, r });
        }
        h = h.min(math::abs(t_end - t));
        let hs = dir * h;

        let (k1r, k1v) = (v, accel(r));
        let (r2, v2) = (r + 0.5 * hs * k1r, v + 0.5 * hs * k1v);
        let (k2r, k2v) = (v2, accel(r2));
        let (r3, v3) = (r + 0.5 * hs * k2r, v + 0.5 * hs * k2v);
        let (k3r, k3v) = (v3, accel(r3));
        let (r4, v4) = (r + hs * k3r, v + hs * k3v);
        let (k4r, k4v) = (v4, accel(r4));
        r += hs / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
        v += hs / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        t += hs;
        steps += 1;
        if r < min_radius {
            min_radius = r;
        }
    }
    Ok(OdeSolution {
        state: PhasePhys { r, v, ell },
        steps,
        min_radius,
    })
}

// ---------------------------------------------------------------------------
