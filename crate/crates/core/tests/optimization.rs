use num_complex::Complex64 as C64;
use proptest::prelude::*;
use storelight::model::{Envelope, Grid, MediumParams};
use storelight::optimizer::{iterate, run_cycle, IterateOptions};
use storelight::oracle::{build_map, optimal_efficiency, optimal_efficiency_power};
use storelight::pulses::{build, l2_distance, PulseSpec};
use storelight::Solver;

const T: f64 = 20.0;

fn small_grid(tau: f64) -> Grid {
    Grid::new(T, tau, T, 0.1, 60).unwrap()
}

fn complete_control(params: &MediumParams, grid: &Grid) -> Envelope {
    let omega = (10.0 * params.d * params.gamma / T).sqrt();
    build(&PulseSpec::constant(omega), grid.write_window()).unwrap()
}

fn trial(grid: &Grid) -> Envelope {
    build(
        &PulseSpec::gaussian(-T / 2.0, 2.0, 1.0),
        grid.write_window(),
    )
    .unwrap()
}

#[test]
fn iteration_is_independent_of_the_normalization_energy() {
    let params = MediumParams {
        d: 5.0,
        gamma: 1.0,
        gamma_s: 0.0,
    };
    let grid = small_grid(0.0);
    let control = complete_control(&params, &grid);
    let unit = IterateOptions {
        max_iters: 6,
        ..IterateOptions::default()
    };
    let ten = IterateOptions {
        target_energy: 10.0,
        ..unit
    };
    let a = iterate(&params, &grid, &control, &trial(&grid), Solver::Full, &unit).unwrap();
    let b = iterate(&params, &grid, &control, &trial(&grid), Solver::Full, &ten).unwrap();
    assert_eq!(a.records.len(), b.records.len());
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert!((ra.efficiency - rb.efficiency).abs() < 1e-10 * ra.efficiency);
        assert!((rb.input.energy() - 10.0).abs() < 1e-9);
    }
    let shape = l2_distance(
        &a.fixed_point_input,
        &b.fixed_point_input.scaled(C64::new(0.1f64.sqrt(), 0.0)),
        false,
    );
    assert!(shape.unwrap() < 1e-10);
}

#[test]
fn optimum_never_exceeds_the_storage_bound() {
    let params = MediumParams {
        d: 5.0,
        gamma: 1.0,
        gamma_s: 0.05,
    };
    let grid = small_grid(3.0);
    let control = complete_control(&params, &grid);
    let map = build_map(&params, &grid, &control, Solver::Full).unwrap();
    let spectral = optimal_efficiency(&map).unwrap();
    let bound = (-2.0 * params.gamma_s * grid.tau).exp();
    assert!(spectral.eta_max <= bound, "{} > {bound}", spectral.eta_max);
    let result = iterate(
        &params,
        &grid,
        &control,
        &trial(&grid),
        Solver::Full,
        &IterateOptions::default(),
    )
    .unwrap();
    assert!(result.max_efficiency <= spectral.eta_max * (1.0 + 1e-9));
}

#[test]
fn unit_impulses_never_gain_energy() {
    for d in [1.0, 5.0, 9.0, 25.0] {
        let params = MediumParams {
            d,
            gamma: 1.0,
            gamma_s: 0.0,
        };
        let grid = Grid::new(T, 0.0, T, T / (T * (1.0 + d)).ceil(), 40).unwrap();
        let control = complete_control(&params, &grid);
        let map = build_map(&params, &grid, &control, Solver::Full).unwrap();
        let gain = map.max_column_gain();
        assert!(gain <= 1.0, "d = {d}: column gain {gain}");
    }
}

#[test]
fn dense_and_power_eigensolvers_agree_with_svd() {
    let params = MediumParams {
        d: 9.0,
        gamma: 1.0,
        gamma_s: 0.0,
    };
    let grid = small_grid(0.0);
    let control = complete_control(&params, &grid);
    let map = build_map(&params, &grid, &control, Solver::Full).unwrap();
    let dense = optimal_efficiency(&map).unwrap();
    let power = optimal_efficiency_power(&map, 1e-12, 10_000).unwrap();
    // Independent route: largest singular value of the raw matrix.
    let sigma = map.matrix.clone().svd(false, false).singular_values[0];
    let from_svd = sigma * sigma * map.out_window.dt / map.in_window.dt;
    assert!((dense.eta_max - from_svd).abs() < 1e-10 * from_svd);
    assert!((power.eta_max - from_svd).abs() < 1e-8 * from_svd);
    assert!(dense.eta_max < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn storage_time_factors_out(tau in 0.0f64..20.0, gamma_s in 0.0f64..0.2) {
        let params = MediumParams { d: 5.0, gamma: 1.0, gamma_s };
        let grid0 = small_grid(0.0);
        let grid = small_grid(tau);
        let control = complete_control(&params, &grid0);
        let input = trial(&grid0);
        let eta0 = run_cycle(&params, &grid0, &control, &input, Solver::Full).unwrap().efficiency;
        let eta = run_cycle(&params, &grid, &control, &input, Solver::Full).unwrap().efficiency;
        let expected = (-2.0 * gamma_s * tau).exp();
        prop_assert!((eta / eta0 - expected).abs() < 1e-10, "ratio {} vs {expected}", eta / eta0);
    }

    #[test]
    fn cycle_is_passive(
        amps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3),
        centers in prop::collection::vec(-18.0f64..-2.0, 3),
        d in 0.5f64..20.0,
    ) {
        let params = MediumParams { d, gamma: 1.0, gamma_s: 0.0 };
        let grid = small_grid(0.0);
        let w = grid.write_window();
        let mut input = Envelope::zeros(w);
        for ((re, im), c) in amps.iter().zip(&centers) {
            let bump = build(&PulseSpec::gaussian(*c, 1.5, 1.0), w).unwrap();
            input = input.add(&bump.scaled(C64::new(*re, *im))).unwrap();
        }
        prop_assume!(input.energy() > 1e-6);
        let control = complete_control(&params, &grid);
        let cycle = run_cycle(&params, &grid, &control, &input, Solver::Full).unwrap();
        let f = cycle.fractions();
        prop_assert!(cycle.efficiency <= 1.0);
        prop_assert!(f.output + f.leakage <= 1.0 + 1e-3);
        // What is neither output, leakage nor dissipation is excitation left in
        // the medium, which can only be non-negative.
        prop_assert!(f.residual > -1e-3, "residual {}", f.residual);
        prop_assert!(cycle.write.relative_imbalance() < 1e-2);
        prop_assert!(cycle.retrieve.relative_imbalance() < 1e-2);
    }
}
