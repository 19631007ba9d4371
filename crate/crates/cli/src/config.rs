//! TOML run configuration and its resolution into simulator inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use storelight::model::{
    from_experimental, validate_params, Cell, Envelope, Grid, MediumParams, Rates, Times,
    WARN_INCOMPLETE_RETRIEVAL,
};
use storelight::optimizer::IterateOptions;
use storelight::pulses::{build, read_csv, PulseSpec};
use storelight::Solver;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub solver: Solver,
    /// Dimensionless medium; requires `[grid]`.
    pub medium: Option<MediumParams>,
    /// Laboratory-unit medium and timing; times in seconds, control Rabi
    /// frequencies in 1/s.
    pub experimental: Option<Experimental>,
    pub grid: Option<GridConfig>,
    pub control: PulseSource,
    pub trial: PulseSource,
    #[serde(default)]
    pub optimizer: IterateOptions,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// When false, summaries also report wall-clock timings.
    #[serde(default = "default_true")]
    pub deterministic: bool,
    /// Named write controls for a control-profile comparison.
    #[serde(default)]
    pub study: BTreeMap<String, PulseSource>,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_write: f64,
    #[serde(default)]
    pub tau: f64,
    pub t_retrieve: f64,
    pub dt: Option<f64>,
    pub nz: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experimental {
    pub length: f64,
    pub optical_depth: f64,
    pub gamma: f64,
    #[serde(default)]
    pub gamma_s: f64,
    pub t_write: f64,
    pub tau: f64,
    pub t_retrieve: f64,
    pub dt: Option<f64>,
    pub nz: Option<usize>,
}

/// A pulse given either inline or as a CSV file of `t,re[,im]` rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PulseSource {
    File { csv: PathBuf },
    Inline(PulseSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    D,
    GammaS,
    Tau,
    ControlAmplitude,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::D => "d",
            SweepParameter::GammaS => "gamma_s",
            SweepParameter::Tau => "tau",
            SweepParameter::ControlAmplitude => "control_amplitude",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Also compute the spectral optimum at every point.
    #[serde(default)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub t_stride: usize,
    pub z_stride: usize,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            t_stride: 10,
            z_stride: 10,
        }
    }
}

/// A configuration with every pulse built on the grid and every check run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub hash: String,
    pub params: MediumParams,
    pub grid: Grid,
    pub control: Envelope,
    pub trial: Envelope,
    pub study: Vec<(String, Envelope)>,
    pub warnings: Vec<String>,
    /// Seconds per dimensionless time unit when the medium came from the
    /// experimental block.
    pub time_unit: Option<f64>,
    /// Directory that relative pulse files are read from.
    pub base: PathBuf,
}

pub fn load(path: &Path, solver_override: Option<Solver>) -> Result<Resolved, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let mut config: RunConfig =
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if let Some(solver) = solver_override {
        config.solver = solver;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(config, base)
}

/// Validates `config` and builds its pulses. Relative CSV paths are taken
/// from `base`.
pub fn resolve(config: RunConfig, base: &Path) -> Result<Resolved, CliError> {
    let (params, grid, time_unit) = medium_and_grid(&config)?;
    let mut hasher = Sha256::new();
    let mut canonical = config.clone();
    canonical.output_dir = PathBuf::new();
    hasher.update(serde_json::to_vec(&canonical).map_err(|e| CliError::config(e.to_string()))?);

    let window = grid.write_window();
    let mut pulse = |name: &str, source: &PulseSource, rate: bool| -> Result<Envelope, CliError> {
        let env = match source {
            PulseSource::Inline(spec) => {
                let spec = match time_unit {
                    Some(unit) => to_dimensionless(spec, unit, rate),
                    None => spec.clone(),
                };
                build(&spec, window)
            }
            PulseSource::File { csv } => {
                let path = base.join(csv);
                let bytes = fs::read(&path).map_err(|e| {
                    CliError::config(format!("{name}: cannot read {}: {e}", path.display()))
                })?;
                hasher.update(&bytes);
                read_csv(bytes.as_slice()).and_then(|env| {
                    let env = match time_unit {
                        Some(unit) => rescale_envelope(&env, unit, rate)?,
                        None => env,
                    };
                    if env.window().same_as(&window) {
                        Ok(env)
                    } else {
                        Err(storelight::Error::WindowMismatch(format!(
                            "samples cover {} points from t = {} with dt = {}, write window has {} points from {} with dt = {}",
                            env.len(),
                            env.window().start,
                            env.window().dt,
                            window.count,
                            window.start,
                            window.dt
                        )))
                    }
                })
            }
        };
        env.map_err(|e| CliError::config(format!("{name}: {e}")))
    };

    let control = pulse("control", &config.control, true)?;
    let trial = pulse("trial", &config.trial, false)?;
    let mut study = Vec::new();
    for (id, source) in &config.study {
        study.push((id.clone(), pulse(&format!("study.{id}"), source, true)?));
    }

    for (id, env) in &study {
        let report = validate_params(&params, &grid, env)
            .into_result()
            .map_err(|e| CliError::config(format!("study.{id}: {e}")))?;
        if report.has_warning(WARN_INCOMPLETE_RETRIEVAL) {
            return Err(CliError::config(format!(
                "study.{id}: control carries too little energy for complete retrieval"
            )));
        }
    }

    let report = validate_params(&params, &grid, &control)
        .into_result()
        .map_err(|e| CliError::config(e.to_string()))?;
    let mut warnings: Vec<String> = report.warnings().map(|w| w.message.clone()).collect();
    warnings.extend(grid.adjustments.iter().cloned());

    if let Some(sweep) = &config.sweep {
        if sweep.values.is_empty() {
            return Err(CliError::config("sweep.values is empty"));
        }
        if let Some(v) = sweep.values.iter().find(|v| !v.is_finite()) {
            return Err(CliError::config(format!("sweep value {v} is not finite")));
        }
    }
    if config.optimizer.max_iters == 0 {
        return Err(CliError::config("optimizer.max_iters must be at least 1"));
    }
    if config.optimizer.target_energy.is_nan() || config.optimizer.target_energy <= 0.0 {
        return Err(CliError::config("optimizer.target_energy must be positive"));
    }

    let hash = hex::encode(hasher.finalize());
    Ok(Resolved {
        config,
        hash,
        params,
        grid,
        control,
        trial,
        study,
        warnings,
        time_unit,
        base: base.to_path_buf(),
    })
}

fn medium_and_grid(config: &RunConfig) -> Result<(MediumParams, Grid, Option<f64>), CliError> {
    match (&config.medium, &config.experimental, &config.grid) {
        (Some(params), None, Some(g)) => {
            params
                .check()
                .map_err(|e| CliError::config(e.to_string()))?;
            let grid = match g.dt {
                Some(dt) => Grid::new(
                    g.t_write,
                    g.tau,
                    g.t_retrieve,
                    dt,
                    g.nz.unwrap_or(Grid::DEFAULT_NZ),
                ),
                None => {
                    Grid::default_for(params, g.t_write, g.tau, g.t_retrieve).map(|mut grid| {
                        grid.nz = g.nz.unwrap_or(Grid::DEFAULT_NZ);
                        grid
                    })
                }
            }
            .map_err(|e| CliError::config(e.to_string()))?;
            if grid.nz < 2 {
                return Err(CliError::config("grid.nz must be at least 2"));
            }
            Ok((*params, grid, None))
        }
        (Some(_), None, None) => Err(CliError::config("[medium] needs a [grid] section")),
        (None, Some(x), None) => {
            let (params, grid, scales) = from_experimental(
                Cell {
                    length: x.length,
                    optical_depth: x.optical_depth,
                },
                Rates {
                    gamma: x.gamma,
                    gamma_s: x.gamma_s,
                },
                Times {
                    t_write: x.t_write,
                    tau: x.tau,
                    t_retrieve: x.t_retrieve,
                    dt: x.dt,
                    nz: x.nz,
                },
            )
            .map_err(|e| CliError::config(e.to_string()))?;
            Ok((params, grid, Some(scales.time_unit)))
        }
        (None, Some(_), Some(_)) => Err(CliError::config(
            "[experimental] carries its own timing; remove [grid]",
        )),
        (Some(_), Some(_), _) => Err(CliError::config(
            "give either [medium] or [experimental], not both",
        )),
        (None, None, _) => Err(CliError::config(
            "missing [medium] or [experimental] section",
        )),
    }
}

/// Converts a pulse given in seconds (and, for controls, 1/s) to
/// dimensionless units.
fn to_dimensionless(spec: &PulseSpec, unit: f64, rate: bool) -> PulseSpec {
    let amp = |a: f64| if rate { a * unit } else { a };
    let time = |t: f64| t / unit;
    match spec.clone() {
        PulseSpec::Gaussian {
            center,
            width,
            amplitude,
        } => PulseSpec::Gaussian {
            center: time(center),
            width: time(width),
            amplitude: amp(amplitude),
        },
        PulseSpec::Square { level, start, end } => PulseSpec::Square {
            level: amp(level),
            start: start.map(time),
            end: end.map(time),
        },
        PulseSpec::TwoStep {
            first,
            second,
            switch_time,
        } => PulseSpec::TwoStep {
            first: amp(first),
            second: amp(second),
            switch_time: time(switch_time),
        },
        PulseSpec::LinearRamp { from, to } => PulseSpec::LinearRamp {
            from: amp(from),
            to: amp(to),
        },
        PulseSpec::FromSamples { samples } => PulseSpec::FromSamples {
            samples: samples
                .into_iter()
                .map(|s| if rate { s * unit } else { s })
                .collect(),
        },
    }
}

fn rescale_envelope(env: &Envelope, unit: f64, rate: bool) -> storelight::Result<Envelope> {
    let w = env.window();
    let window = storelight::model::TimeWindow::new(w.start / unit, w.dt / unit, w.count);
    let factor = if rate { unit } else { 1.0 };
    Envelope::new(window, env.samples().iter().map(|s| s * factor).collect())
}

impl Resolved {
    /// The same configuration with one medium or grid parameter replaced.
    pub fn with_parameter(
        &self,
        parameter: SweepParameter,
        value: f64,
    ) -> Result<Resolved, CliError> {
        let mut config = self.config.clone();
        config.sweep = None;
        config.study.clear();
        let unit = self.time_unit;
        match parameter {
            SweepParameter::D => match (&mut config.medium, &mut config.experimental) {
                (Some(m), _) => m.d = value,
                (_, Some(x)) => x.optical_depth = value,
                _ => unreachable!("resolved configs have a medium"),
            },
            SweepParameter::GammaS => match (&mut config.medium, &mut config.experimental) {
                (Some(m), _) => m.gamma_s = value,
                (_, Some(x)) => x.gamma_s = value,
                _ => unreachable!("resolved configs have a medium"),
            },
            SweepParameter::Tau => match (&mut config.grid, &mut config.experimental) {
                (Some(g), _) => g.tau = value,
                (_, Some(x)) => x.tau = value,
                _ => unreachable!("resolved configs have timing"),
            },
            SweepParameter::ControlAmplitude => {
                let peak = self.control.peak_abs();
                if peak == 0.0 {
                    return Err(CliError::config(
                        "cannot sweep the amplitude of a zero control",
                    ));
                }
                let target = match unit {
                    Some(u) => value * u,
                    None => value,
                };
                let samples = self
                    .control
                    .samples()
                    .iter()
                    .map(|s| s * (target / peak))
                    .collect();
                let mut resolved = self.clone();
                resolved.config = config;
                resolved.control = Envelope::new(self.control.window(), samples)
                    .map_err(|e| CliError::config(e.to_string()))?;
                let report = validate_params(&resolved.params, &resolved.grid, &resolved.control)
                    .into_result()
                    .map_err(|e| CliError::config(e.to_string()))?;
                resolved.warnings = report.warnings().map(|w| w.message.clone()).collect();
                return Ok(resolved);
            }
        }
        let mut resolved = resolve(config, &self.base)?;
        resolved.hash = self.hash.clone();
        Ok(resolved)
    }
}
