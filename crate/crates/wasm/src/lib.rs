//! Browser bindings: one storage cycle, the time-reversal optimization and
//! the EIT figures of merit, each taking and returning JSON strings.
//!
//! The plain functions (`run_cycle_json`, ...) hold the logic so they can be
//! tested natively; the `#[wasm_bindgen]` wrappers only convert errors.

use serde::{Deserialize, Serialize};
use storelight::model::{eit_diagnostics, Envelope, Grid, MediumParams};
use storelight::optimizer::{iterate, run_cycle, IterateOptions};
use storelight::pulses::{build, PulseSpec};
use storelight::Solver;
use wasm_bindgen::prelude::*;

/// Demo parameters in units of `1/gamma`. The write and retrieve windows
/// have the same length.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub d: f64,
    pub gamma_s: f64,
    pub tau: f64,
    pub window: f64,
    /// Constant control Rabi frequency.
    pub omega: f64,
    pub trial_center: f64,
    pub trial_width: f64,
    pub nz: usize,
    pub solver: Solver,
    pub max_iters: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            d: 9.0,
            gamma_s: 0.0,
            tau: 0.0,
            window: 30.0,
            omega: 3f64.sqrt(),
            trial_center: -5.0,
            trial_width: 2.0,
            nz: 60,
            solver: Solver::Full,
            max_iters: 20,
        }
    }
}

struct Setup {
    params: MediumParams,
    grid: Grid,
    control: Envelope,
    trial: Envelope,
}

fn setup(config: &DemoConfig) -> Result<Setup, String> {
    let params = MediumParams::new(config.d, 1.0, config.gamma_s).map_err(|e| e.to_string())?;
    let mut grid = Grid::default_for(&params, config.window, config.tau, config.window)
        .map_err(|e| e.to_string())?;
    if config.nz < 2 {
        return Err(format!("nz must be at least 2, got {}", config.nz));
    }
    grid.nz = config.nz;
    let window = grid.write_window();
    let control = build(&PulseSpec::constant(config.omega), window).map_err(|e| e.to_string())?;
    let trial = build(
        &PulseSpec::gaussian(config.trial_center, config.trial_width, 1.0),
        window,
    )
    .map_err(|e| e.to_string())?;
    Ok(Setup {
        params,
        grid,
        control,
        trial,
    })
}

fn parse(config_json: &str) -> Result<DemoConfig, String> {
    if config_json.trim().is_empty() {
        return Ok(DemoConfig::default());
    }
    serde_json::from_str(config_json).map_err(|e| format!("bad config: {e}"))
}

/// A waveform reduced to what the page plots.
#[derive(Debug, Serialize)]
pub struct Trace {
    pub t0: f64,
    pub dt: f64,
    pub abs: Vec<f64>,
}

impl From<&Envelope> for Trace {
    fn from(env: &Envelope) -> Self {
        Trace {
            t0: env.window().start,
            dt: env.window().dt,
            abs: env.samples().iter().map(|s| s.norm()).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
struct CycleView {
    efficiency: f64,
    leakage_fraction: f64,
    dissipated_fraction: f64,
    input: Trace,
    leakage: Trace,
    output: Trace,
}

pub fn run_cycle_json(config_json: &str) -> Result<String, String> {
    let config = parse(config_json)?;
    let s = setup(&config)?;
    let cycle = run_cycle(&s.params, &s.grid, &s.control, &s.trial, config.solver)
        .map_err(|e| e.to_string())?;
    let f = cycle.fractions();
    let view = CycleView {
        efficiency: cycle.efficiency,
        leakage_fraction: f.leakage,
        dissipated_fraction: f.dissipated,
        input: (&cycle.input).into(),
        leakage: (&cycle.leakage).into(),
        output: (&cycle.output).into(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct IterationView {
    efficiency: f64,
    leakage_fraction: f64,
    input: Trace,
    output: Trace,
}

#[derive(Debug, Serialize)]
struct OptimizeView {
    converged: bool,
    efficiencies: Vec<f64>,
    iterations: Vec<IterationView>,
    fixed_point: Trace,
}

pub fn optimize_json(config_json: &str) -> Result<String, String> {
    let config = parse(config_json)?;
    let s = setup(&config)?;
    let options = IterateOptions {
        max_iters: config.max_iters.max(1),
        ..IterateOptions::default()
    };
    let result = iterate(
        &s.params,
        &s.grid,
        &s.control,
        &s.trial,
        config.solver,
        &options,
    )
    .map_err(|e| e.to_string())?;
    let view = OptimizeView {
        converged: result.converged,
        efficiencies: result.efficiencies(),
        iterations: result
            .records
            .iter()
            .map(|r| IterationView {
                efficiency: r.efficiency,
                leakage_fraction: r.leakage_fraction,
                input: (&r.input).into(),
                output: (&r.output).into(),
            })
            .collect(),
        fixed_point: (&result.fixed_point_input).into(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

pub fn diagnostics_json(d: f64, omega: f64, signal_duration: f64) -> Result<String, String> {
    let params = MediumParams::new(d, 1.0, 0.0).map_err(|e| e.to_string())?;
    let diag = eit_diagnostics(&params, omega, signal_duration).map_err(|e| e.to_string())?;
    serde_json::to_string(&diag).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn simulate_cycle(config_json: &str) -> Result<String, JsError> {
    run_cycle_json(config_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn optimize(config_json: &str) -> Result<String, JsError> {
    optimize_json(config_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn diagnostics(d: f64, omega: f64, signal_duration: f64) -> Result<String, JsError> {
    diagnostics_json(d, omega, signal_duration).map_err(|e| JsError::new(&e))
}
