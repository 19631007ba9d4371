use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use storelight::model::{Diagnostics, FieldState, Grid, MediumParams};
use storelight::optimizer::{
    control_study, iterate, retrieval_control, run_cycle, EnergyFractions, OptimizationResult,
};
use storelight::oracle::{
    build_map, crosscheck_with, optimal_efficiency, read_map, write_map, CrosscheckReport,
    EigenMethod, MapHeader,
};
use storelight::propagation::{solve, storage_decay, EnergyLedger, StepView, TrajectoryCsv};
use storelight::pulses::l2_distance;
use storelight::Solver;

use crate::config::{Resolved, SweepParameter};
use crate::output::OutputDir;
use crate::CliError;

fn elapsed(res: &Resolved, start: Instant) -> Option<f64> {
    (!res.config.deterministic).then(|| start.elapsed().as_secs_f64())
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    solver: Solver,
    params: MediumParams,
    grid: &'a Grid,
    efficiency: f64,
    fractions: EnergyFractions,
    write: EnergyLedger,
    write_relative_imbalance: f64,
    retrieve: EnergyLedger,
    retrieve_relative_imbalance: f64,
    storage_loss: f64,
    handoff_loss: f64,
    diagnostics: Option<Diagnostics>,
    warnings: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed_seconds: Option<f64>,
}

pub fn simulate(res: &Resolved, out: &Path, trajectory: bool) -> Result<(), CliError> {
    let start = Instant::now();
    let cycle = run_cycle(
        &res.params,
        &res.grid,
        &res.control,
        &res.trial,
        res.config.solver,
    )?;
    let trajectories = if trajectory {
        Some(trajectories(res)?)
    } else {
        None
    };

    let signal_duration = res.grid.t_write;
    let diagnostics =
        storelight::model::eit_diagnostics(&res.params, res.control.peak_abs(), signal_duration)
            .ok();
    let summary = SimulateSummary {
        solver: res.config.solver,
        params: res.params,
        grid: &res.grid,
        efficiency: cycle.efficiency,
        fractions: cycle.fractions(),
        write: cycle.write,
        write_relative_imbalance: cycle.write.relative_imbalance(),
        retrieve: cycle.retrieve,
        retrieve_relative_imbalance: cycle.retrieve.relative_imbalance(),
        storage_loss: cycle.storage_loss,
        handoff_loss: cycle.handoff_loss,
        diagnostics,
        warnings: &res.warnings,
        elapsed_seconds: elapsed(res, start),
    };

    let dir = OutputDir::create(out, &res.hash)?;
    dir.write_envelope("input.csv", &cycle.input)?;
    dir.write_envelope("leakage.csv", &cycle.leakage)?;
    dir.write_envelope("output.csv", &cycle.output)?;
    dir.write_json("ledger.json", &summary)?;
    if let Some((write, retrieve)) = trajectories {
        dir.write_bytes("trajectory_write.csv", &write)?;
        dir.write_bytes("trajectory_retrieve.csv", &retrieve)?;
    }
    println!("efficiency {:.6}", cycle.efficiency);
    Ok(())
}

/// Field snapshots for both stages as CSV bytes.
fn trajectories(res: &Resolved) -> Result<(Vec<u8>, Vec<u8>), CliError> {
    let preamble = vec![format!("config_hash={}", res.hash)];
    let strides = res.config.trajectory;
    let solver = res.config.solver;

    let mut dump = TrajectoryCsv::new(Vec::new(), &preamble, strides.t_stride, strides.z_stride)?;
    let mut observer = |view: &StepView<'_>| dump.record(view);
    let write = solve(
        solver,
        &FieldState::empty(res.grid.nz),
        &res.params,
        &res.control,
        Some(&res.trial),
        Some(&mut observer),
    )?;
    let write_bytes = dump.finish()?;

    let stored = storage_decay(&write.spin_wave, res.grid.tau, res.params.gamma_s);
    let control_retrieve = retrieval_control(&res.grid, &res.control)?;
    let mut dump = TrajectoryCsv::new(Vec::new(), &preamble, strides.t_stride, strides.z_stride)?;
    let mut observer = |view: &StepView<'_>| dump.record(view);
    solve(
        solver,
        &FieldState::from_spin_wave(&stored),
        &res.params,
        &control_retrieve,
        None,
        Some(&mut observer),
    )?;
    Ok((write_bytes, dump.finish()?))
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    solver: Solver,
    params: MediumParams,
    converged: bool,
    converged_efficiency: bool,
    converged_shape: bool,
    iterations: usize,
    final_efficiency: f64,
    max_efficiency: f64,
    monotone: bool,
    warnings: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed_seconds: Option<f64>,
}

const ITERATION_HEADER: &str = "index,efficiency,leakage,dissipation,residual,shape_delta";

fn write_optimization(
    dir: &OutputDir,
    prefix: &str,
    res: &Resolved,
    result: &OptimizationResult,
    elapsed_seconds: Option<f64>,
) -> Result<(), CliError> {
    let rows: Vec<String> = result
        .records
        .iter()
        .map(|r| {
            format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.index,
                r.efficiency,
                r.leakage_fraction,
                r.dissipated_fraction,
                r.residual_fraction,
                r.delta_vs_previous
            )
        })
        .collect();
    dir.write_table(&format!("{prefix}iterations.csv"), ITERATION_HEADER, &rows)?;
    for r in &result.records {
        dir.write_envelope(
            &format!("{prefix}waveforms/{:03}_input.csv", r.index),
            &r.input,
        )?;
        dir.write_envelope(
            &format!("{prefix}waveforms/{:03}_leakage.csv", r.index),
            &r.leakage,
        )?;
        dir.write_envelope(
            &format!("{prefix}waveforms/{:03}_output.csv", r.index),
            &r.output,
        )?;
    }
    dir.write_envelope(
        &format!("{prefix}fixed_point.csv"),
        &result.fixed_point_input,
    )?;
    let summary = OptimizeSummary {
        solver: res.config.solver,
        params: res.params,
        converged: result.converged,
        converged_efficiency: result.converged_efficiency,
        converged_shape: result.converged_shape,
        iterations: result.records.len(),
        final_efficiency: result.final_efficiency(),
        max_efficiency: result.max_efficiency,
        monotone: result.is_monotone(1e-6),
        warnings: &res.warnings,
        elapsed_seconds,
    };
    dir.write_json(&format!("{prefix}summary.json"), &summary)
}

#[derive(Serialize)]
struct StudyRow {
    id: String,
    max_efficiency: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct StudySummary {
    rows: Vec<StudyRow>,
    relative_spread: f64,
    /// Smallest phase-aligned distance between two optimized input shapes.
    min_pairwise_l2: Option<f64>,
}

pub fn optimize(res: &Resolved, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let options = &res.config.optimizer;
    if res.study.is_empty() {
        let result = iterate(
            &res.params,
            &res.grid,
            &res.control,
            &res.trial,
            res.config.solver,
            options,
        )?;
        let dir = OutputDir::create(out, &res.hash)?;
        write_optimization(&dir, "", res, &result, elapsed(res, start))?;
        println!(
            "{} after {} iterations: efficiency {:.6}",
            if result.converged {
                "converged"
            } else {
                "not converged"
            },
            result.records.len(),
            result.final_efficiency()
        );
        return Ok(());
    }

    let study = control_study(
        &res.params,
        &res.grid,
        &res.study,
        &res.trial,
        res.config.solver,
        options,
    )?;
    let mut min_l2: Option<f64> = None;
    for i in 0..study.rows.len() {
        for j in 0..i {
            let d = l2_distance(
                &study.rows[i].fixed_point_input,
                &study.rows[j].fixed_point_input,
                true,
            )?;
            min_l2 = Some(min_l2.map_or(d, |m| m.min(d)));
        }
    }
    let summary = StudySummary {
        rows: study
            .rows
            .iter()
            .map(|r| StudyRow {
                id: r.control_id.clone(),
                max_efficiency: r.max_efficiency,
                iterations: r.result.records.len(),
                converged: r.result.converged,
            })
            .collect(),
        relative_spread: study.relative_spread(),
        min_pairwise_l2: min_l2,
    };
    let dir = OutputDir::create(out, &res.hash)?;
    for row in &study.rows {
        write_optimization(
            &dir,
            &format!("{}/", row.control_id),
            res,
            &row.result,
            None,
        )?;
    }
    dir.write_json("study.json", &summary)?;
    for row in &summary.rows {
        println!("{}: efficiency {:.6}", row.id, row.max_efficiency);
    }
    println!("relative spread {:.3e}", summary.relative_spread);
    Ok(())
}

#[derive(Serialize)]
struct SweepPoint {
    value: f64,
    max_efficiency: f64,
    final_efficiency: f64,
    iterations: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_efficiency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_ratio: Option<f64>,
}

#[derive(Serialize)]
struct DecayFit {
    /// Least-squares slope of `-ln(eta) / 2` against the storage time.
    fitted_gamma_s: f64,
    gamma_s: f64,
    /// Coefficient of determination of `eta_0 exp(-2 gamma_s (tau - tau_0))`.
    r_squared: f64,
}

#[derive(Serialize)]
struct SweepSummary {
    parameter: &'static str,
    points: Vec<SweepPoint>,
    strictly_increasing: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay_fit: Option<DecayFit>,
}

pub fn sweep(res: &Resolved, out: &Path) -> Result<(), CliError> {
    let sweep = res
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::config("the sweep command needs a [sweep] section"))?;
    let points: Vec<Resolved> = sweep
        .values
        .iter()
        .map(|&v| res.with_parameter(sweep.parameter, v))
        .collect::<Result<_, _>>()?;
    let results: Vec<(OptimizationResult, Option<(f64, f64)>)> = points
        .par_iter()
        .map(|p| -> Result<_, CliError> {
            let opt = iterate(
                &p.params,
                &p.grid,
                &p.control,
                &p.trial,
                p.config.solver,
                &p.config.optimizer,
            )?;
            let oracle = if sweep.oracle {
                let map = build_map(&p.params, &p.grid, &p.control, p.config.solver)?;
                let spectral = optimal_efficiency(&map)?;
                Some((spectral.eta_max, spectral.gap_ratio()))
            } else {
                None
            };
            Ok((opt, oracle))
        })
        .collect::<Result<_, _>>()?;

    let summary_points: Vec<SweepPoint> = sweep
        .values
        .iter()
        .zip(&results)
        .map(|(&value, (opt, oracle))| SweepPoint {
            value,
            max_efficiency: opt.max_efficiency,
            final_efficiency: opt.final_efficiency(),
            iterations: opt.records.len(),
            converged: opt.converged,
            oracle_efficiency: oracle.map(|o| o.0),
            gap_ratio: oracle.map(|o| o.1),
        })
        .collect();
    let strictly_increasing = summary_points
        .windows(2)
        .all(|w| w[1].max_efficiency > w[0].max_efficiency);
    let decay_fit = (sweep.parameter == SweepParameter::Tau)
        .then(|| decay_fit(&summary_points, res.params.gamma_s));
    let summary = SweepSummary {
        parameter: sweep.parameter.name(),
        points: summary_points,
        strictly_increasing,
        decay_fit,
    };

    let mut header = format!(
        "{},max_efficiency,final_efficiency,iterations,converged",
        sweep.parameter.name()
    );
    if sweep.oracle {
        header.push_str(",oracle_efficiency,gap_ratio");
    }
    let rows: Vec<String> = summary
        .points
        .iter()
        .map(|p| {
            let mut row = format!(
                "{:.12e},{:.12e},{:.12e},{},{}",
                p.value, p.max_efficiency, p.final_efficiency, p.iterations, p.converged
            );
            if let (Some(o), Some(g)) = (p.oracle_efficiency, p.gap_ratio) {
                row.push_str(&format!(",{o:.12e},{g:.12e}"));
            }
            row
        })
        .collect();

    let dir = OutputDir::create(out, &res.hash)?;
    for (k, (opt, _)) in results.iter().enumerate() {
        dir.write_envelope(
            &format!("points/{k:03}_fixed_point.csv"),
            &opt.fixed_point_input,
        )?;
    }
    dir.write_table("sweep.csv", &header, &rows)?;
    dir.write_json("sweep.json", &summary)?;
    for p in &summary.points {
        println!(
            "{} = {}: efficiency {:.6}",
            summary.parameter, p.value, p.max_efficiency
        );
    }
    Ok(())
}

fn decay_fit(points: &[SweepPoint], gamma_s: f64) -> DecayFit {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.value).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.max_efficiency).collect();
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let ml = logs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxl: f64 = xs.iter().zip(&logs).map(|(x, l)| (x - mx) * (l - ml)).sum();
    let fitted_gamma_s = if sxx > 0.0 {
        -0.5 * sxl / sxx
    } else {
        f64::NAN
    };

    let (x0, y0) = (xs[0], ys[0]);
    let my = ys.iter().sum::<f64>() / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - y0 * (-2.0 * gamma_s * (x - x0)).exp()).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    DecayFit {
        fitted_gamma_s,
        gamma_s,
        r_squared,
    }
}

#[derive(Serialize, serde::Deserialize)]
struct OracleSummary {
    #[serde(flatten)]
    header: MapHeader,
    eta_max: f64,
    eta_second: f64,
    gap_ratio: f64,
    method: EigenMethod,
}

pub fn oracle(res: &Resolved, out: &Path) -> Result<(), CliError> {
    let map = build_map(&res.params, &res.grid, &res.control, res.config.solver)?;
    map.check_finite()?;
    let spectral = optimal_efficiency(&map)?;
    let mut payload = Vec::new();
    let header = write_map(&map, &res.hash, &mut payload)?;
    let summary = OracleSummary {
        header,
        eta_max: spectral.eta_max,
        eta_second: spectral.eta_second,
        gap_ratio: spectral.gap_ratio(),
        method: spectral.method,
    };
    let dir = OutputDir::create(out, &res.hash)?;
    dir.write_bytes("map.bin", &payload)?;
    dir.write_json("map.json", &summary)?;
    dir.write_envelope("optimal_input.csv", &spectral.optimal_input)?;
    println!(
        "optimal efficiency {:.6} (gap ratio {:.4})",
        spectral.eta_max,
        spectral.gap_ratio()
    );
    Ok(())
}

pub fn crosscheck(res: &Resolved, map_dir: &Path, out: &Path) -> Result<(), CliError> {
    let json_path = map_dir.join("map.json");
    let text = fs::read_to_string(&json_path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", json_path.display())))?;
    let stored: OracleSummary = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", json_path.display())))?;
    if stored.header.config_hash != res.hash {
        return Err(CliError::config(format!(
            "refusing to compare: map was built from config {} but this config hashes to {}",
            stored.header.config_hash, res.hash
        )));
    }
    let bin_path = map_dir.join("map.bin");
    let bytes = fs::read(&bin_path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", bin_path.display())))?;
    let map = read_map(&stored.header, bytes.as_slice())?;
    map.check_finite()?;

    let spectral = optimal_efficiency(&map)?;
    let opt = iterate(
        &res.params,
        &res.grid,
        &res.control,
        &res.trial,
        res.config.solver,
        &res.config.optimizer,
    )?;
    let report: CrosscheckReport = crosscheck_with(&opt, &spectral)?;
    let dir = OutputDir::create(out, &res.hash)?;
    dir.write_json("crosscheck.json", &report)?;
    println!(
        "iterative {:.6} vs spectral {:.6} (relative difference {:.2e}, overlap {:.5})",
        report.eta_iterative, report.eta_spectral, report.rel_difference, report.mode_overlap
    );
    if report.slow_convergence {
        println!(
            "warning: gap ratio {:.4} is close to 1; the iteration converges slowly",
            report.gap_ratio
        );
    }
    Ok(())
}
