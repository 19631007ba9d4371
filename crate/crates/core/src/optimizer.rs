//! Iterative time-reversal optimization of the input signal pulse.
//!
//! Each iteration writes the current input into the medium, stores it, reads
//! it out with the time-reversed control and feeds the time-reversed,
//! renormalized output back in as the next input. Because the read-out with a
//! reversed control acts as the adjoint of the write map (up to a spatial
//! reflection for forward retrieval), the iteration is a power iteration on a
//! Hermitian operator and the efficiency cannot decrease.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Envelope, Grid, MediumParams};
use crate::propagation::{retrieve_stage, storage_decay, write_stage, EnergyLedger, Solver};
use crate::pulses::{l2_distance, normalize_energy, time_reverse};

/// Output energies below this fraction of the input count as no retrieval.
const DEGENERATE_FRACTION: f64 = 1e-30;

/// Ledgers and waveforms of one write/store/retrieve cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleResult {
    /// `int |E_out|^2 dt / int |E_in|^2 dt` over the sample grid.
    pub efficiency: f64,
    pub input: Envelope,
    /// `E(1, t)` during the write stage.
    pub leakage: Envelope,
    /// `E(1, t)` during the retrieve stage.
    pub output: Envelope,
    pub write: EnergyLedger,
    pub retrieve: EnergyLedger,
    /// Spin-wave energy lost while the control is off.
    pub storage_loss: f64,
    /// Polarization energy discarded at the write/retrieve hand-off.
    pub handoff_loss: f64,
}

impl CycleResult {
    /// Fractions of the input energy, from the energy ledgers.
    pub fn fractions(&self) -> EnergyFractions {
        let input = self.write.in_energy;
        if input <= 0.0 {
            return EnergyFractions::default();
        }
        let leakage = self.write.leaked_or_out_energy / input;
        let dissipated =
            (self.write.dissipated() + self.retrieve.dissipated() + self.storage_loss) / input;
        let output = self.retrieve.leaked_or_out_energy / input;
        EnergyFractions {
            output,
            leakage,
            dissipated,
            residual: 1.0 - output - leakage - dissipated,
        }
    }
}

/// Split of the input energy. `residual` covers excitation left behind
/// (discarded polarization, unretrieved spin wave) and quadrature error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyFractions {
    pub output: f64,
    pub leakage: f64,
    pub dissipated: f64,
    pub residual: f64,
}

/// One write/store/retrieve cycle with retrieval control `Omega(tau - t)`.
pub fn run_cycle(
    params: &MediumParams,
    grid: &Grid,
    control_write: &Envelope,
    input: &Envelope,
    solver: Solver,
) -> Result<CycleResult> {
    let retrieval_control = retrieval_control(grid, control_write)?;
    run_cycle_with(
        params,
        grid,
        control_write,
        &retrieval_control,
        input,
        solver,
    )
}

/// The retrieval control: the write control reversed onto the retrieve window.
pub fn retrieval_control(grid: &Grid, control_write: &Envelope) -> Result<Envelope> {
    time_reverse(control_write, grid.retrieve_window())
}

pub(crate) fn run_cycle_with(
    params: &MediumParams,
    grid: &Grid,
    control_write: &Envelope,
    control_retrieve: &Envelope,
    input: &Envelope,
    solver: Solver,
) -> Result<CycleResult> {
    let write = write_stage(params, grid, control_write, input, solver)?;
    let stored = storage_decay(&write.spin_wave, grid.tau, params.gamma_s);
    let retrieve = retrieve_stage(params, grid, control_retrieve, &stored, solver)?;

    let dz = grid.dz();
    let weighted = |v: &[C64]| -> f64 {
        let n = v.len();
        v.iter()
            .enumerate()
            .map(|(j, x)| if j == 0 || j + 1 == n { 0.5 } else { 1.0 } * x.norm_sqr())
            .sum::<f64>()
            * dz
    };
    let spin_before = weighted(&write.spin_wave);
    let spin_after = weighted(&stored);
    let handoff_loss = write.ledger.stored_excitation - spin_before;

    let in_energy = input.energy();
    let efficiency = if in_energy > 0.0 {
        retrieve.boundary_out.energy() / in_energy
    } else {
        0.0
    };
    Ok(CycleResult {
        efficiency,
        input: input.clone(),
        leakage: write.boundary_out,
        output: retrieve.boundary_out,
        write: write.ledger,
        retrieve: retrieve.ledger,
        storage_loss: spin_before - spin_after,
        handoff_loss,
    })
}

/// Stopping rule and normalization for [`iterate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterateOptions {
    /// Shape tolerance on the phase-aligned distance between successive inputs.
    pub epsilon_shape: f64,
    /// Tolerance on the change in efficiency between iterations.
    pub epsilon_eta: f64,
    pub max_iters: usize,
    /// Energy every input is normalized to.
    pub target_energy: f64,
}

impl Default for IterateOptions {
    fn default() -> Self {
        IterateOptions {
            epsilon_shape: 1e-4,
            epsilon_eta: 1e-6,
            max_iters: 50,
            target_energy: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 0 for the trial pulse.
    pub index: usize,
    pub efficiency: f64,
    pub leakage_fraction: f64,
    pub dissipated_fraction: f64,
    pub residual_fraction: f64,
    pub input: Envelope,
    pub leakage: Envelope,
    pub output: Envelope,
    /// Phase-aligned distance between this input and the next one.
    pub delta_vs_previous: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Efficiency changed by less than `epsilon_eta` on the last iteration.
    pub converged_efficiency: bool,
    /// Input shape changed by less than `epsilon_shape` on the last iteration.
    pub converged_shape: bool,
    /// The input produced from the last output (normalized, time reversed).
    pub fixed_point_input: Envelope,
    pub max_efficiency: f64,
}

impl OptimizationResult {
    pub fn efficiencies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.efficiency).collect()
    }

    pub fn final_efficiency(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.efficiency)
    }

    /// True if no iteration lost more than `tol` efficiency.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].efficiency >= w[0].efficiency - tol)
    }
}

/// Runs the time-reversal iteration from `trial` until the input shape and
/// the efficiency both stop changing, or `max_iters` cycles have run.
pub fn iterate(
    params: &MediumParams,
    grid: &Grid,
    control_write: &Envelope,
    trial: &Envelope,
    solver: Solver,
    options: &IterateOptions,
) -> Result<OptimizationResult> {
    if grid.write_steps() != grid.retrieve_steps() {
        return Err(Error::InvalidParameter(
            "the optimizer needs equal write and retrieve durations".into(),
        ));
    }
    if options.max_iters == 0 {
        return Err(Error::InvalidParameter(
            "max_iters must be at least 1".into(),
        ));
    }
    if !(trial.energy() > 0.0) {
        return Err(Error::InvalidParameter("trial pulse has no energy".into()));
    }
    let write_window = grid.write_window();
    let control_retrieve = retrieval_control(grid, control_write)?;
    let mut input = normalize_energy(trial, options.target_energy)?;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut converged_efficiency = false;
    let mut converged_shape = false;

    for index in 0..options.max_iters {
        let cycle = run_cycle_with(
            params,
            grid,
            control_write,
            &control_retrieve,
            &input,
            solver,
        )?;
        let out_energy = cycle.output.energy();
        if !(out_energy > DEGENERATE_FRACTION * input.energy()) {
            return Err(Error::DegenerateRetrieval(format!(
                "iteration {index}: retrieved energy {out_energy:e} for input energy {:e} \
                 (efficiency {:e}); check that the control is on during retrieval",
                input.energy(),
                cycle.efficiency
            )));
        }
        let next = normalize_energy(
            &time_reverse(&cycle.output, write_window)?,
            options.target_energy,
        )?;
        let delta = l2_distance(&input, &next, true)?;
        let fractions = cycle.fractions();

        converged_shape = delta < options.epsilon_shape;
        converged_efficiency = match records.last() {
            Some(prev) => (cycle.efficiency - prev.efficiency).abs() < options.epsilon_eta,
            // A first input that reproduces itself will reproduce its efficiency.
            None => converged_shape,
        };
        records.push(IterationRecord {
            index,
            efficiency: cycle.efficiency,
            leakage_fraction: fractions.leakage,
            dissipated_fraction: fractions.dissipated,
            residual_fraction: 1.0 - cycle.efficiency - fractions.leakage - fractions.dissipated,
            input,
            leakage: cycle.leakage,
            output: cycle.output,
            delta_vs_previous: delta,
        });
        input = next;
        if converged_shape && converged_efficiency {
            break;
        }
    }

    let max_efficiency = records.iter().map(|r| r.efficiency).fold(0.0, f64::max);
    Ok(OptimizationResult {
        records,
        converged: converged_shape && converged_efficiency,
        converged_efficiency,
        converged_shape,
        fixed_point_input: input,
        max_efficiency,
    })
}

/// One row of a control-profile comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStudyRow {
    pub control_id: String,
    pub max_efficiency: f64,
    pub fixed_point_input: Envelope,
    pub result: OptimizationResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlStudy {
    pub rows: Vec<ControlStudyRow>,
}

impl ControlStudy {
    /// `(max - min) / max` of the optimized efficiencies.
    pub fn relative_spread(&self) -> f64 {
        let max = self
            .rows
            .iter()
            .map(|r| r.max_efficiency)
            .fold(f64::NEG_INFINITY, f64::max);
        let min = self
            .rows
            .iter()
            .map(|r| r.max_efficiency)
            .fold(f64::INFINITY, f64::min);
        if max > 0.0 {
            (max - min) / max
        } else {
            0.0
        }
    }
}

/// Optimizes the same trial under several write controls. Every control must
/// carry enough energy for complete retrieval.
pub fn control_study(
    params: &MediumParams,
    grid: &Grid,
    controls: &[(String, Envelope)],
    trial: &Envelope,
    solver: Solver,
    options: &IterateOptions,
) -> Result<ControlStudy> {
    if controls.is_empty() {
        return Err(Error::InvalidParameter(
            "control study needs at least one control".into(),
        ));
    }
    for (id, control) in controls {
        let report = crate::model::validate_params(params, grid, control).into_result()?;
        if report.has_warning(crate::model::WARN_INCOMPLETE_RETRIEVAL) {
            return Err(Error::InvalidParameter(format!(
                "control '{id}': {}",
                crate::model::WARN_INCOMPLETE_RETRIEVAL
            )));
        }
    }
    let run = |(id, control): &(String, Envelope)| -> Result<ControlStudyRow> {
        let result = iterate(params, grid, control, trial, solver, options)?;
        Ok(ControlStudyRow {
            control_id: id.clone(),
            max_efficiency: result.max_efficiency,
            fixed_point_input: result.fixed_point_input.clone(),
            result,
        })
    };
    #[cfg(feature = "parallel")]
    let rows = {
        use rayon::prelude::*;
        controls.par_iter().map(run).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows = controls.iter().map(run).collect::<Result<Vec<_>>>()?;
    Ok(ControlStudy { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulses::{build, PulseSpec};

    fn setup(d: f64, gamma_s: f64, tau: f64) -> (MediumParams, Grid, Envelope, Envelope) {
        let params = MediumParams {
            d,
            gamma: 1.0,
            gamma_s,
        };
        let grid = Grid::new(20.0, tau, 20.0, 0.1, 40).unwrap();
        let control = build(&PulseSpec::constant(1.5), grid.write_window()).unwrap();
        let trial = build(&PulseSpec::gaussian(-10.0, 2.0, 1.0), grid.write_window()).unwrap();
        (params, grid, control, trial)
    }

    #[test]
    fn no_medium_no_retrieval() {
        let (params, grid, control, trial) = setup(0.0, 0.0, 1.0);
        let cycle = run_cycle(&params, &grid, &control, &trial, Solver::Full).unwrap();
        assert_eq!(cycle.efficiency, 0.0);
        assert!((cycle.fractions().leakage - 1.0).abs() < 1e-12);
    }

    #[test]
    fn storage_time_is_irrelevant_without_spin_decay() {
        let (params, grid, control, trial) = setup(5.0, 0.0, 1.0);
        let a = run_cycle(&params, &grid, &control, &trial, Solver::Full).unwrap();
        let grid2 = Grid {
            tau: 250.0,
            ..grid.clone()
        };
        let b = run_cycle(&params, &grid2, &control, &trial, Solver::Full).unwrap();
        assert!((a.efficiency / b.efficiency - 1.0).abs() < 1e-12);
    }

    #[test]
    fn storage_decay_ratio_is_exponential() {
        let gamma_s = 0.01;
        let (params, grid, control, trial) = setup(5.0, gamma_s, 5.0);
        let longer = Grid {
            tau: 5.0 + 0.2 / gamma_s,
            ..grid.clone()
        };
        let a = run_cycle(&params, &longer, &control, &trial, Solver::Full).unwrap();
        let b = run_cycle(&params, &grid, &control, &trial, Solver::Full).unwrap();
        assert!((a.efficiency / b.efficiency - (-0.4f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn fractions_close() {
        let (params, grid, control, trial) = setup(5.0, 0.01, 3.0);
        let cycle = run_cycle(&params, &grid, &control, &trial, Solver::Full).unwrap();
        let f = cycle.fractions();
        assert!(f.residual > -1e-3, "{f:?}");
        assert!((f.output - cycle.efficiency).abs() < 1e-2);
        assert!(cycle.storage_loss > 0.0);
    }

    #[test]
    fn iteration_is_monotone_and_saturates() {
        let (params, grid, control, trial) = setup(5.0, 0.0, 1.0);
        let result = iterate(
            &params,
            &grid,
            &control,
            &trial,
            Solver::Full,
            &IterateOptions::default(),
        )
        .unwrap();
        assert!(result.converged, "{:?}", result.efficiencies());
        assert!(result.is_monotone(1e-6));
        assert!(result.records.len() <= 15);
    }

    #[test]
    fn fixed_point_converges_immediately() {
        let (params, grid, control, trial) = setup(5.0, 0.0, 1.0);
        let opts = IterateOptions::default();
        let first = iterate(&params, &grid, &control, &trial, Solver::Full, &opts).unwrap();
        let again = iterate(
            &params,
            &grid,
            &control,
            &first.fixed_point_input,
            Solver::Full,
            &opts,
        )
        .unwrap();
        assert_eq!(again.records.len(), 1);
        assert!(again.converged);
        assert!(again.records[0].delta_vs_previous < opts.epsilon_shape);
    }

    #[test]
    fn max_iters_one_gives_one_record() {
        let (params, grid, control, trial) = setup(5.0, 0.0, 1.0);
        let opts = IterateOptions {
            max_iters: 1,
            ..Default::default()
        };
        let result = iterate(&params, &grid, &control, &trial, Solver::Full, &opts).unwrap();
        assert_eq!(result.records.len(), 1);
        assert!(!result.converged);
    }

    #[test]
    fn zero_control_is_degenerate() {
        let (params, grid, _, trial) = setup(5.0, 0.0, 1.0);
        let control = build(&PulseSpec::constant(0.0), grid.write_window()).unwrap();
        let err = iterate(
            &params,
            &grid,
            &control,
            &trial,
            Solver::Full,
            &IterateOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateRetrieval(_)), "{err:?}");
    }

    #[test]
    fn unequal_windows_rejected() {
        let (params, _, _, _) = setup(5.0, 0.0, 1.0);
        let grid = Grid::new(20.0, 1.0, 25.0, 0.1, 40).unwrap();
        let control = build(&PulseSpec::constant(1.5), grid.write_window()).unwrap();
        let trial = build(&PulseSpec::gaussian(-10.0, 2.0, 1.0), grid.write_window()).unwrap();
        assert!(iterate(
            &params,
            &grid,
            &control,
            &trial,
            Solver::Full,
            &IterateOptions::default()
        )
        .is_err());
    }

    #[test]
    fn single_control_study_matches_iterate() {
        let (params, grid, _, trial) = setup(2.0, 0.0, 1.0);
        let control = build(&PulseSpec::constant(1.5), grid.write_window()).unwrap();
        let opts = IterateOptions::default();
        let study = control_study(
            &params,
            &grid,
            &[("c".into(), control.clone())],
            &trial,
            Solver::Full,
            &opts,
        )
        .unwrap();
        let direct = iterate(&params, &grid, &control, &trial, Solver::Full, &opts).unwrap();
        assert_eq!(study.rows.len(), 1);
        assert_eq!(study.rows[0].max_efficiency, direct.max_efficiency);
        assert_eq!(study.relative_spread(), 0.0);
    }

    #[test]
    fn weak_control_rejected_by_study() {
        let (params, grid, _, trial) = setup(9.0, 0.0, 1.0);
        let control = build(&PulseSpec::constant(0.5), grid.write_window()).unwrap();
        let err = control_study(
            &params,
            &grid,
            &[("weak".into(), control)],
            &trial,
            Solver::Full,
            &IterateOptions::default(),
        );
        assert!(err.is_err());
    }
}
