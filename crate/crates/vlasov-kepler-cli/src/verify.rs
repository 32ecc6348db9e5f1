//! The `verify` subcommand: a fast property battery over every layer of
//! the stack, run without any simulation. Each check prints one PASS/FAIL
//! line; the battery is deterministic and finishes in seconds.
//!
//! These are smoke-level reruns of the structural contracts (the full
//! suites live in the crates' tests): coordinate-map exactness,
//! canonicity, inverse-profile residuals, the closed-form flow against a
//! direct ODE integration, prefix-sum field versus a linear scan, the
//! transport-metric identities, conservation audits, and thread-count
//! determinism.

use std::io::Write;

use vlasov_kepler_core::action_angle::{
    kepler_ode_oracle, shifted_radius_value, symplectic_defect, to_aa, to_phys, PhaseAA,
};
use vlasov_kepler_core::diagnostics::{lp_conservation_check, wasserstein1};
use vlasov_kepler_core::dynamics::{step, Ensemble, StepSettings};
use vlasov_kepler_core::field::{build_field_view, Marker};
use vlasov_kepler_core::kepler::{g_kappa, h_kappa, PhysicalConstants};

type Check = (&'static str, fn() -> Result<(), String>);

fn fail(msg: String) -> Result<(), String> {
    Err(msg)
}

/// Deterministic pseudo-random stream in [0, 1) (64-bit LCG, top bits).
fn lcg(state: &mut u64) -> f64 {
    *state = state
        .wrapping_mul(6_364_136_223_846_793_005)
        .wrapping_add(1_442_695_040_888_963_407);
    (*state >> 11) as f64 / (1u64 << 53) as f64
}

fn sample_grid() -> Vec<PhaseAA> {
    let mut grid = Vec::new();
    for &a in &[0.05_f64, 0.3, 1.0, 5.0] {
        for &ell in &[0.1_f64, 1.0, 10.0] {
            for &theta in &[-40.0_f64, -1.0, 1e-3, 0.7, 40.0] {
                grid.push(PhaseAA { theta, a, ell });
            }
        }
    }
    grid
}

fn check_round_trip() -> Result<(), String> {
    let m = 1.0;
    for q in sample_grid() {
        let x = to_phys(m, &q).map_err(|e| e.to_string())?;
        let back = to_aa(m, &x).map_err(|e| e.to_string())?;
        let dh = (back.theta - q.theta).abs();
        let da = (back.a - q.a).abs();
        if dh > 1e-9 * (1.0 + q.theta.abs()) || da > 1e-9 * q.a || back.ell != q.ell {
            return fail(format!(
                "round trip off at (theta={}, a={}, ell={}): dtheta={dh:.2e}, da={da:.2e}",
                q.theta, q.a, q.ell
            ));
        }
    }
    Ok(())
}

fn check_canonicity() -> Result<(), String> {
    let m = 1.0;
    for t in [0.0, 7.0] {
        for q in sample_grid() {
            let defect = symplectic_defect(m, &q, t).map_err(|e| e.to_string())?;
            if !(defect <= 1e-8) {
                return fail(format!(
                    "symplectic defect {defect:.2e} at (theta={}, a={}, ell={}), t={t}",
                    q.theta, q.a, q.ell
                ));
            }
        }
    }
    Ok(())
}

fn check_profile_inverse() -> Result<(), String> {
    for &kappa in &[1e-6_f64, 0.5, 1.0 - 1e-9] {
        for k in 0..30 {
            let x = 1e-3 * 10f64.powf(k as f64 * 0.3);
            let y = h_kappa(kappa, x).map_err(|e| e.to_string())?;
            let back = g_kappa(kappa, y).map_err(|e| e.to_string())?;
            if (back - x).abs() > 1e-11 * (1.0 + x) {
                return fail(format!(
                    "G(H(x)) - x = {:.2e} at kappa={kappa}, x={x:.3e}",
                    back - x
                ));
            }
        }
    }
    Ok(())
}

fn check_flow_vs_ode() -> Result<(), String> {
    let m = 1.0;
    let t_end = 10.0;
    for (a, ell, theta0) in [(1.2, 0.8, -5.0), (0.6, 2.0, 2.0), (2.0, 0.5, -1.0)] {
        let q0 = PhaseAA {
            theta: theta0,
            a,
            ell,
        };
        let x0 = to_phys(m, &q0).map_err(|e| e.to_string())?;
        let ode = kepler_ode_oracle(m, &x0, t_end, 1e-3).map_err(|e| e.to_string())?;
        let q_t = PhaseAA {
            theta: theta0 + a * t_end,
            a,
            ell,
        };
        let closed = to_phys(m, &q_t).map_err(|e| e.to_string())?;
        let rel = (closed.r - ode.state.r).abs() / ode.state.r;
        if !(rel <= 1e-6) {
            return fail(format!(
                "closed-form vs ODE radius differs by {rel:.2e} at (a={a}, ell={ell}, theta0={theta0})"
            ));
        }
    }
    Ok(())
}

fn random_markers(n: usize, seed: u64) -> Vec<Marker> {
    let mut s = seed;
    (0..n)
        .map(|_| Marker {
            theta: 20.0 * (lcg(&mut s) - 0.5),
            a: 0.2 + 2.0 * lcg(&mut s),
            ell: 0.2 + 2.0 * lcg(&mut s),
            w: 0.1 + lcg(&mut s),
            g: lcg(&mut s),
        })
        .collect()
}

fn check_field_scan() -> Result<(), String> {
    let m = 1.0;
    let t = 3.0;
    let markers = random_markers(1000, 0xc0ffee);
    let mut sorted: Vec<(f64, usize)> = markers
        .iter()
        .enumerate()
        .map(|(i, mk)| {
            shifted_radius_value(m, &mk.phase(), t).map(|r| (r, i)).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let view = build_field_view(m, &markers, t).map_err(|e| e.to_string())?;
    let mut s = 0x5eed_u64;
    for k in 0..200 {
        // mix random radii with exact marker radii (tie inclusion)
        let r = if k % 4 == 0 {
            sorted[(k * 37) % sorted.len()].0
        } else {
            0.05 + 30.0 * lcg(&mut s)
        };
        let mut acc = 0.0_f64;
        for &(radius, idx) in &sorted {
            if radius <= r {
                acc += markers[idx].mass();
            } else {
                break;
            }
        }
        let scan = if acc == 0.0 { 0.0 } else { -acc / (r * r) };
        let fast = view.force_at(r).map_err(|e| e.to_string())?;
        if fast.to_bits() != scan.to_bits() {
            return fail(format!(
                "prefix force {fast:e} != linear scan {scan:e} at r={r:.6e}"
            ));
        }
    }
    Ok(())
}

fn check_potential_force() -> Result<(), String> {
    let m = 1.0;
    let t = 3.0;
    let markers = random_markers(400, 0xabcdef);
    let view = build_field_view(m, &markers, t).map_err(|e| e.to_string())?;
    let mut s = 0x77aa_u64;
    let mut checked = 0usize;
    while checked < 40 {
        let r = 0.5 + 25.0 * lcg(&mut s);
        let dr = 1e-5 * r;
        // skip stencils straddling a marker radius: the force is a step
        // function there and one-sided derivatives differ
        let lo_mass = view.mass_within(r - dr).map_err(|e| e.to_string())?;
        let hi_mass = view.mass_within(r + dr).map_err(|e| e.to_string())?;
        if lo_mass != hi_mass {
            continue;
        }
        checked += 1;
        let hi = view.potential_at(r + dr).map_err(|e| e.to_string())?;
        let lo = view.potential_at(r - dr).map_err(|e| e.to_string())?;
        let fd = -(hi - lo) / (2.0 * dr);
        let force = view.force_at(r).map_err(|e| e.to_string())?;
        let scale = force.abs().max(1e-3);
        if (fd - force).abs() > 1e-6 * scale {
            return fail(format!(
                "potential FD {fd:e} vs force {force:e} at r={r:.6e}"
            ));
        }
    }
    Ok(())
}

fn check_wasserstein() -> Result<(), String> {
    let a = vec![(0.0, 1.0), (1.0, 1.0)];
    let same = wasserstein1(&a, &a).map_err(|e| e.to_string())?;
    if same != 0.0 {
        return fail(format!("W1(mu, mu) = {same:e} != 0"));
    }
    let b: Vec<(f64, f64)> = a.iter().map(|&(x, w)| (x + 0.35, w)).collect();
    let shift = wasserstein1(&a, &b).map_err(|e| e.to_string())?;
    if (shift - 0.7).abs() > 1e-12 {
        return fail(format!("translation cost {shift:e}, expected 0.7"));
    }
    let c = vec![(0.5, 2.0)];
    let merge = wasserstein1(&a, &c).map_err(|e| e.to_string())?;
    if (merge - 1.0).abs() > 1e-12 {
        return fail(format!("merge cost {merge:e}, expected 1.0"));
    }
    Ok(())
}

fn check_lp_audit() -> Result<(), String> {
    let a = random_markers(50, 0x11);
    let same = lp_conservation_check(&[&a, &a], &[1.0, 2.0]).map_err(|e| e.to_string())?;
    if same != 0.0 {
        return fail(format!("identical snapshots drift {same:e}"));
    }
    let mut b = a.clone();
    b[17].g += 1e-9;
    let drift = lp_conservation_check(&[&a, &b], &[1.0, 2.0]).map_err(|e| e.to_string())?;
    if !(drift > 0.0) {
        return fail("mutated density not caught by the conservation audit".into());
    }
    Ok(())
}

fn small_ensemble() -> Result<Ensemble, String> {
    let consts = PhysicalConstants::new(1.0, 1.0).map_err(|e| e.to_string())?;
    let markers = random_markers(37, 0x2222)
        .into_iter()
        .map(|mut mk| {
            mk.a += 0.8; // keep the support margin comfortable
            mk.g *= 0.05;
            mk
        })
        .collect();
    Ensemble::new(markers, consts, 0.05, 0.5).map_err(|e| e.to_string())
}

fn check_thread_determinism() -> Result<(), String> {
    let mut seq = small_ensemble()?;
    let mut par = seq.clone();
    let base = StepSettings::default();
    for _ in 0..3 {
        step(&mut seq, None, 0.05, &StepSettings { threads: 1, ..base })
            .map_err(|e| e.to_string())?;
        step(&mut par, None, 0.05, &StepSettings { threads: 4, ..base })
            .map_err(|e| e.to_string())?;
    }
    for (i, (a, b)) in seq.markers.iter().zip(&par.markers).enumerate() {
        if a != b {
            return fail(format!("marker {i} differs between 1 and 4 threads"));
        }
    }
    Ok(())
}

fn check_zero_coupling_freeze() -> Result<(), String> {
    let mut ens = small_ensemble()?;
    ens.consts = PhysicalConstants::new(1.0, 0.0).map_err(|e| e.to_string())?;
    let before = ens.markers.clone();
    for _ in 0..5 {
        step(&mut ens, None, 0.05, &StepSettings::default()).map_err(|e| e.to_string())?;
    }
    if ens.markers != before {
        return fail("uncoupled markers moved (asymptotic coordinates must freeze)".into());
    }
    Ok(())
}

const CHECKS: &[Check] = &[
    ("coordinate-round-trip", check_round_trip),
    ("canonicity-sample", check_canonicity),
    ("profile-inverse-residual", check_profile_inverse),
    ("closed-form-flow-vs-ode", check_flow_vs_ode),
    ("field-prefix-vs-linear-scan", check_field_scan),
    ("potential-force-consistency", check_potential_force),
    ("transport-metric-identities", check_wasserstein),
    ("conservation-audit-sensitivity", check_lp_audit),
    ("thread-count-determinism", check_thread_determinism),
    ("zero-coupling-freeze", check_zero_coupling_freeze),
];

/// Runs every check, printing one line each; returns `true` when all pass.
pub fn run_battery(out: &mut impl Write) -> bool {
    let mut all_ok = true;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => {
                let _ = writeln!(out, "PASS {name}");
            }
            Err(msg) => {
                all_ok = false;
                let _ = writeln!(out, "FAIL {name}: {msg}");
            }
        }
    }
    all_ok
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_on_a_clean_tree() {
        let mut buf = Vec::new();
        assert!(run_battery(&mut buf), "{}", String::from_utf8_lossy(&buf));
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), CHECKS.len());
        assert!(text.lines().all(|l| l.starts_with("PASS ")));
    }
}
