//! Self-consistent gravitational field of a weighted marker ensemble.
//!
//! The ensemble is an atomic measure in action-angle coordinates: marker
//! `i` carries phase-space volume `w_i > 0` and density value `g_i >= 0`,
//! so its mass element is `w_i g_i^2`. At time `t` the marker sits at the
//! physical radius `Rt_i = R(theta_i + a_i t, a_i, ell_i)`, and the radial
//! (attractive) field felt at radius `r` is minus the enclosed mass over
//! `r^2`:
//!
//! ```text
//! F(t, r) = -(1/r^2) * sum_i 1{Rt_i <= r} w_i g_i^2 .
//! ```
//!
//! [`FieldView`] materializes one time slice: radii sorted with a stable
//! index tie-break and mass accumulated in that order, so every query is a
//! binary search plus a lookup and is *bit-deterministic* for a fixed input
//! ordering — no parallel or query-order-dependent summation anywhere. The
//! companion potential uses the radial kernel `1/max(r, s)`:
//!
//! ```text
//! psi(t, r) = - sum_i w_i g_i^2 / max(r, Rt_i),     psi -> 0 as r -> inf,
//! ```
//!
//! which satisfies `d(psi)/dr = -F` away from marker radii.
//!
//! [`EffectiveMassProfile`] is the late-time comparison object in which
//! each marker is placed at its free asymptotic radius `a_i t` instead of
//! `Rt_i`; the difference `F - F_eff` decays faster than either field and
//! is one of the long-run diagnostics.
//!
//! The field enters the marker dynamics only through [`aa_force`]: with
//! coupling `lambda`, the shifted-radius jet converts the radial field into
//! the canonical velocity `(dtheta/dt, da/dt) = (-lambda F dRt/da,
//! lambda F dRt/dtheta)`.
//!
//! Conventions: a marker querying the field at exactly its own radius
//! includes its own mass (closed indicator `<=`); the effect is a
//! deterministic `O(1/N)` perturbation and can be removed explicitly with
//! [`FieldView::force_at_excluding`] for single-marker fixtures.

use alloc::vec::Vec;

use crate::action_angle::{shifted_radius, shifted_radius_value, MapError, PhaseAA};
use crate::japanese_bracket;
use crate::kepler::PhysicalConstants;
use crate::math;

/// One ensemble marker: action-angle coordinates plus quadrature weight
/// and carried density value.
///
/// The marker represents the phase-space cell of volume `w` around
/// `(theta, a, ell)` with density value `g`; its mass is `w g^2`. Markers
/// with `g = 0` are massless tracers: they are advected by the flow but
/// contribute nothing to the field.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Marker {
    /// Asymptotic angle.
    pub theta: f64,
    /// Asymptotic radial speed, `a > 0`.
    pub a: f64,
    /// Squared angular momentum, `ell > 0`.
    pub ell: f64,
    /// Quadrature weight (phase-space volume), `w > 0`.
    pub w: f64,
    /// Density value at the marker, `g >= 0`.
    pub g: f64,
}

impl Marker {
    /// The action-angle phase point of the marker.
    #[inline]
    pub fn phase(&self) -> PhaseAA {
        PhaseAA {
            theta: self.theta,
            a: self.a,
            ell: self.ell,
        }
    }

    /// Mass element `w g^2` carried by the marker.
    #[inline]
    pub fn mass(&self) -> f64 {
        self.w * self.g * self.g
    }
}

/// Errors of field construction and queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldError {
    /// Query radius was non-positive or non-finite.
    NonPositiveRadius(f64),
    /// Snapshot time was out of domain (negative, or zero where positive
    /// time is required) or non-finite.
    BadTime(f64),
    /// Marker `index` has an inadmissible weight or density value.
    BadMarker {
        /// Position in the input slice.
        index: usize,
    },
    /// Radius evaluation failed for marker `index`.
    Map {
        /// Position in the input slice.
        index: usize,
        /// Underlying coordinate-map error.
        source: MapError,
    },
}

impl core::fmt::Display for FieldError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::NonPositiveRadius(r) => write!(f, "query radius must be positive, got {r}"),
            Self::BadTime(t) => write!(f, "snapshot time {t} out of domain"),
            Self::BadMarker { index } => write!(f, "marker {index} has invalid weight or density"),
            Self::Map { index, source } => write!(f, "marker {index}: {source}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FieldError {}

fn check_radius(r: f64) -> Result<(), FieldError> {
    if !(r.is_finite() && r > 0.0) {
        return Err(FieldError::NonPositiveRadius(r));
    }
    Ok(())
}

fn check_marker(index: usize, mk: &Marker) -> Result<(), FieldError> {
    if !(mk.w.is_finite() && mk.w > 0.0 && mk.g.is_finite() && mk.g >= 0.0) {
        return Err(FieldError::BadMarker { index });
    }
    Ok(())
}

/// Immutable one-time-slice view of the ensemble's field.
///
/// Construction sorts markers by shifted radius (stable index tie-break)
/// and accumulates prefix masses in that order; queries never re-sum.
/// Shared read-only access from multiple threads is safe; the view is
/// never mutated after construction.
#[derive(Debug, Clone)]
pub struct FieldView {
    /// Shifted radii, nondecreasing.
    radii: Vec<f64>,
    /// `prefix[i]` = mass of markers `0..=i` in radius order.
    prefix: Vec<f64>,
    /// `suffix_inv[i]` = sum over markers `i..` of `mass / radius`
    /// (length `n + 1`, last entry `0`); the outer part of the potential.
    suffix_inv: Vec<f64>,
    /// Snapshot time.
    t: f64,
    /// Total mass `sum w g^2` (last prefix entry, or `0` when empty).
    total_mass: f64,
}

/// Contribution of a single marker, for explicit self-exclusion in force
/// queries: its current shifted radius and mass element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfContribution {
    /// The marker's own shifted radius at the view's time.
    pub radius: f64,
    /// The marker's mass element `w g^2`.
    pub mass: f64,
}

/// Builds the field view of `markers` at time `t >= 0`.
///
/// Each marker's shifted radius is evaluated once; the ensemble is then
/// sorted by `(radius, input index)` and masses are accumulated in that
/// order. The result is bit-deterministic for a fixed input ordering.
///
/// # Errors
///
/// Rejects negative/non-finite `t` and invalid markers; propagates
/// coordinate-map failures tagged with the marker index.
pub fn build_field_view(m: f64, markers: &[Marker], t: f64) -> Result<FieldView, FieldError> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(FieldError::BadTime(t));
    }
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(markers.len());
    for (index, mk) in markers.iter().enumerate() {
        check_marker(index, mk)?;
        let r = shifted_radius_value(m, &mk.phase(), t)
            .map_err(|source| FieldError::Map { index, source })?;
        order.push((r, index));
    }
    order.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    let n = order.len();
    let mut radii = Vec::with_capacity(n);
    let mut prefix = Vec::with_capacity(n);
    let mut acc = 0.0_f64;
    for &(r, index) in &order {
        acc += markers[index].mass();
        radii.push(r);
        prefix.push(acc);
    }
    let mut suffix_inv = alloc::vec![0.0_f64; n + 1];
    for i in (0..n).rev() {
        let (r, index) = order[i];
        suffix_inv[i] = suffix_inv[i + 1] + markers[index].mass() / r;
    }
    Ok(FieldView {
        radii,
        prefix,
        suffix_inv,
        t,
        total_mass: acc,
    })
}

impl FieldView {
    /// Snapshot time of the view.
    #[inline]
    pub fn time(&self) -> f64 {
        self.t
    }

    /// Total mass `sum w g^2` of the ensemble.
    #[inline]
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Number of markers in the view.
    #[inline]
    pub fn len(&self) -> usize {
        self.radii.len()
    }

    /// Whether the view holds no markers.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Sorted shifted radii of all markers.
    #[inline]
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Mass enclosed in `{s <= r}` (closed ball: markers exactly at `r`
    /// count).
    ///
    /// # Errors
    ///
    /// Rejects `r <= 0`.
    pub fn mass_within(&self, r: f64) -> Result<f64, FieldError> {
        check_radius(r)?;
        let k = self.radii.partition_point(|&s| s <= r);
        Ok(if k == 0 { 0.0 } else { self.prefix[k - 1] })
    }

    /// Field value `F(t, r) = -mass_within(r) / r^2 <= 0`.
    ///
    /// # Errors
    ///
    /// Rejects `r <= 0`.
    pub fn force_at(&self, r: f64) -> Result<f64, FieldError> {
        let mass = self.mass_within(r)?;
        Ok(if mass == 0.0 { 0.0 } else { -mass / (r * r) })
    }

    /// Field value with one marker's own contribution removed (the marker
    /// counts toward the enclosed mass iff `excl.radius <= r`, so the
    /// subtraction mirrors the inclusion rule exactly).
    ///
    /// # Errors
    ///
    /// Rejects `r <= 0`.
    pub fn force_at_excluding(&self, r: f64, excl: &SelfContribution) -> Result<f64, FieldError> {
        let mut mass = self.mass_within(r)?;
        if excl.radius <= r {
            mass -= excl.mass;
        }
        Ok(if mass <= 0.0 { 0.0 } else { -mass / (r * r) })
    }

    /// Potential `psi(t, r) = -sum_i mass_i / max(r, radius_i) <= 0`,
    /// assembled from the prefix mass (inner part, kernel `1/r`) and the
    /// precomputed suffix sums of `mass / radius` (outer part).
    ///
    /// # Errors
    ///
    /// Rejects `r <= 0`.
    pub fn potential_at(&self, r: f64) -> Result<f64, FieldError> {
        check_radius(r)?;
        let k = self.radii.partition_point(|&s| s <= r);
        let inner = if k == 0 { 0.0 } else { self.prefix[k - 1] };
        Ok(-(inner / r + self.suffix_inv[k]))
    }
}

/// Prefix-mass profile of the *effective* field at time `t > 0`: every
/// marker is placed at its free asymptotic radius `a t`.
///
/// Queries share the determinism contract of [`FieldView`]; the sort keys
/// are the products `a_i t` themselves, so inclusion `a_i t <= r` is
/// decided on exactly the stored values.
#[derive(Debug, Clone)]
pub struct EffectiveMassProfile {
    keys: Vec<f64>,
    prefix: Vec<f64>,
    t: f64,
    total_mass: f64,
}

/// Builds the effective profile of `markers` at time `t > 0`.
///
/// # Errors
///
/// Rejects `t <= 0` and invalid markers.
pub fn build_effective_profile(
    markers: &[Marker],
    t: f64,
) -> Result<EffectiveMassProfile, FieldError> {
    if !(t.is_finite() && t > 0.0) {
        return Err(FieldError::BadTime(t));
    }
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(markers.len());
    for (index, mk) in markers.iter().enumerate() {
        check_marker(index, mk)?;
        order.push((mk.a * t, index));
    }
    order.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut keys = Vec::with_capacity(order.len());
    let mut prefix = Vec::with_capacity(order.len());
    let mut acc = 0.0_f64;
    for &(key, index) in &order {
        acc += markers[index].mass();
        keys.push(key);
        prefix.push(acc);
    }
    Ok(EffectiveMassProfile {
        keys,
        prefix,
        t,
        total_mass: acc,
    })
}

impl EffectiveMassProfile {
    /// Snapshot time of the profile.
    #[inline]
    pub fn time(&self) -> f64 {
        self.t
    }

    /// Total mass of the ensemble.
    #[inline]
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Mass with `a t <= r`.
    ///
    /// # Errors
    ///
    /// Rejects `r <= 0`.
    pub fn mass_within(&self, r: f64) -> Result<f64, FieldError> {
        check_radius(r)?;
        let k = self.keys.partition_point(|&s| s <= r);
        Ok(if k == 0 { 0.0 } else { self.prefix[k - 1] })
    }

    /// Effective field `F_eff(t, r) = -(1/r^2) sum 1{a t <= r} w g^2`.
    ///
    /// # Errors
    ///
    /// Rejects `r <= 0`.
    pub fn force_at(&self, r: f64) -> Result<f64, FieldError> {
        let mass = self.mass_within(r)?;
        Ok(if mass == 0.0 { 0.0 } else { -mass / (r * r) })
    }
}

/// One-shot effective-field query (builds a fresh profile; prefer
/// [`build_effective_profile`] for repeated queries at one time).
///
/// # Errors
///
/// As [`build_effective_profile`] and
/// [`EffectiveMassProfile::force_at`].
pub fn effective_force_at(markers: &[Marker], t: f64, r: f64) -> Result<f64, FieldError> {
    build_effective_profile(markers, t)?.force_at(r)
}

/// Canonical force components on a phase point `q` at time `t`:
///
/// ```text
/// dtheta/dt = -lambda F(t, Rt) dRt/da,
/// da/dt     =  lambda F(t, Rt) dRt/dtheta,
/// ```
///
/// with `Rt` the time-shifted radius of `q` and `F` queried from `view`
/// (which must correspond to the same time `t`). `lambda = 0`
/// short-circuits to `(0, 0)` without touching the jet: the free flow.
///
/// # Errors
///
/// Propagates jet errors; the field query cannot fail (`Rt > 0`).
pub fn aa_force(
    consts: &PhysicalConstants,
    q: &PhaseAA,
    t: f64,
    view: &FieldView,
) -> Result<(f64, f64), MapError> {
    aa_force_excluding(consts, q, t, view, None)
}

/// As [`aa_force`], optionally removing one marker's own contribution from
/// the field query (twin-run fixtures and single-marker tests).
///
/// # Errors
///
/// Propagates jet errors.
pub fn aa_force_excluding(
    consts: &PhysicalConstants,
    q: &PhaseAA,
    t: f64,
    view: &FieldView,
    excl: Option<&SelfContribution>,
) -> Result<(f64, f64), MapError> {
    if consts.lambda == 0.0 {
        return Ok((0.0, 0.0));
    }
    let jet = shifted_radius(consts.m, q, t)?;
    let force = match excl {
        Some(e) => view.force_at_excluding(jet.r, e),
        None => view.force_at(jet.r),
    }
    .expect("shifted radius is positive");
    if force == 0.0 {
        return Ok((0.0, 0.0));
    }
    Ok((
        -consts.lambda * force * jet.dr_da,
        consts.lambda * force * jet.dr_dtheta,
    ))
}

/// Which norm [`moment_norm`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum NormKind {
    /// `max_i weight_i g_i`.
    Sup,
    /// `sqrt(sum_i w_i (weight_i g_i)^2)`.
    L2,
}

/// Exponents of the moment weight
/// `<ell>^j_ell * ell^(-j_ell_inv) * (a + 1/a)^j_a * <theta>^j_theta`,
/// where `<x> = sqrt(2 + x^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MomentSpec {
    /// Power of `<ell>`.
    pub j_ell: u32,
    /// Power of `1/ell` (small-angular-momentum weight).
    pub j_ell_inv: u32,
    /// Power of `a + 1/a` (both ends of the action range).
    pub j_a: u32,
    /// Power of `<theta>`.
    pub j_theta: u32,
}

impl MomentSpec {
    /// The moment weight of one phase point.
    pub fn weight(&self, q: &PhaseAA) -> f64 {
        let mut w = 1.0_f64;
        w *= math::powi(japanese_bracket(q.ell), self.j_ell);
        w *= math::powi(1.0 / q.ell, self.j_ell_inv);
        w *= math::powi(q.a + 1.0 / q.a, self.j_a);
        w *= math::powi(japanese_bracket(q.theta), self.j_theta);
        w
    }
}

/// Weighted norm of the ensemble's density under `spec`.
///
/// `Sup` is the maximum of `weight * g` over markers; `L2` is the
/// quadrature-weighted root of `sum w (weight * g)^2`, i.e. the atomic
/// realization of the corresponding weighted integral norm. Both reduce in
/// input order (deterministic) and return `0` for an empty slice.
pub fn moment_norm(markers: &[Marker], spec: &MomentSpec, norm: NormKind) -> f64 {
    match norm {
        NormKind::Sup => {
            let mut best = 0.0_f64;
            for mk in markers {
                let v = spec.weight(&mk.phase()) * mk.g;
                if v > best {
                    best = v;
                }
            }
            best
        }
        NormKind::L2 => {
            let mut acc = 0.0_f64;
            for mk in markers {
                let v = spec.weight(&mk.phase()) * mk.g;
                acc += mk.w * v * v;
            }
            math::sqrt(acc)
        }
    }
}

// ---------------------------------------------------------------------------
