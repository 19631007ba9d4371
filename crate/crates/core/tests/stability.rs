//! Locates the full-model stability threshold by bisection and checks it
//! against the documented stiffness bound.

use storelight::model::{validate_params, Grid, MediumParams, STIFFNESS_BOUND, WARN_STIFF};
use storelight::propagation::write_stage;
use storelight::pulses::{build, PulseSpec};
use storelight::Solver;

const T: f64 = 30.0;
const NZ: usize = 50;
const GAMMA: f64 = 100.0;
const TRACKING_TOL: f64 = 1e-2;

/// Leaked energy and stored spin-wave norm after the write stage at a given
/// `dt * gamma`.
fn write_outcome(params: &MediumParams, dt_gamma: f64) -> Option<(f64, f64)> {
    let steps = (T * params.gamma / dt_gamma).ceil();
    let grid = Grid::new(T, 0.0, T, T / steps, NZ).unwrap();
    let window = grid.write_window();
    let omega = (10.0 * params.d.max(1.0) * params.gamma / T).sqrt();
    let control = build(&PulseSpec::constant(omega), window).unwrap();
    let input = build(&PulseSpec::gaussian(-T / 2.0, 3.0, 1.0), window).unwrap();
    let stage = write_stage(params, &grid, &control, &input, Solver::Full).ok()?;
    let stored: f64 = stage.spin_wave.iter().map(|s| s.norm_sqr()).sum::<f64>() * grid.dz();
    Some((stage.boundary_out.energy(), stored))
}

/// Largest `dt * gamma` for which the write stage stays within
/// `TRACKING_TOL` of a fine-step reference.
fn threshold(d: f64) -> f64 {
    let params = MediumParams {
        d,
        gamma: GAMMA,
        gamma_s: 0.0,
    };
    let (leak_ref, stored_ref) = write_outcome(&params, 0.05).unwrap();
    let tracks = |dt_gamma: f64| match write_outcome(&params, dt_gamma) {
        Some((leak, stored)) => {
            let err =
                ((leak - leak_ref).abs() + (stored - stored_ref).abs()) / (leak_ref + stored_ref);
            err < TRACKING_TOL
        }
        None => false,
    };
    let (mut lo, mut hi) = (0.05, 4.0);
    for _ in 0..25 {
        let mid = 0.5 * (lo + hi);
        if tracks(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn stiffness_bound_is_conservative_and_tight() {
    let scaled: Vec<(f64, f64)> = [0.01, 1.0, 9.0, 100.0]
        .into_iter()
        .map(|d| (d, threshold(d) * (1.0 + d)))
        .collect();
    for &(d, s) in &scaled {
        assert!(
            s >= STIFFNESS_BOUND,
            "d = {d}: breakdown at dt*gamma*(1+d) = {s}"
        );
    }
    let tightest = scaled.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min);
    assert!(
        tightest < 1.05 * STIFFNESS_BOUND,
        "bound is loose: tightest breakdown at {tightest}"
    );
}

#[test]
fn large_time_step_is_flagged() {
    let params = MediumParams {
        d: 0.0,
        gamma: 1.0,
        gamma_s: 0.0,
    };
    let grid = Grid::new(100.0, 0.0, 100.0, 10.0, 20).unwrap();
    let control = build(&PulseSpec::constant(1.0), grid.write_window()).unwrap();
    let report = validate_params(&params, &grid, &control);
    assert!(report.passed());
    assert!(report.has_warning(WARN_STIFF));
}
