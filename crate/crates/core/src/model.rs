//! Dimensionless conventions, medium parameters, grids and EIT figures of merit.
//!
//! Time is measured in units of `1/gamma` when parameters come from
//! [`from_experimental`], position along the cell is `z in [0, 1]`, and the
//! coupling `g sqrt(N)` is absorbed into the optical depth. In the comoving
//! frame the envelope equations read
//!
//! ```text
//! dE/dz = i sqrt(d) P
//! dP/dt = -gamma P + i sqrt(d) gamma E + i Omega S
//! dS/dt = -gamma_s S + i conj(Omega) P
//! ```
//!
//! With these conventions a resonant signal in the absence of control is
//! attenuated as `exp(-d)` in amplitude, and pulse energy enters the energy
//! ledger as `gamma * int |E|^2 dt`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether a duration is already an
/// integer multiple of the time step.
const GRID_SNAP_TOL: f64 = 1e-9;

/// Bound on `dt * gamma * (1 + d)` for the explicit full-model integrator.
///
/// Bisection against fine-step reference runs (see `tests/stability.rs`)
/// puts the breakdown of the full model at `dt * gamma` close to the RK4
/// real-axis limit (about 2.79) for small `d`, falling roughly like
/// `1 / (1 + sqrt(d))` for large `d`. Scaling by `1 + d` is therefore a
/// conservative criterion at every depth; the warning fires above it.
pub const STIFFNESS_BOUND: f64 = 2.75;

/// Retrieval is considered complete once `int |Omega|^2 dt / gamma` exceeds
/// this multiple of the optical depth.
pub const COMPLETE_RETRIEVAL_FACTOR: f64 = 10.0;

/// Physical parameters of the ensemble in dimensionless form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumParams {
    /// Optical depth.
    pub d: f64,
    /// Optical polarization decay rate.
    pub gamma: f64,
    /// Spin-wave decay rate.
    pub gamma_s: f64,
}

impl MediumParams {
    pub fn new(d: f64, gamma: f64, gamma_s: f64) -> Result<Self> {
        let p = MediumParams { d, gamma, gamma_s };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        let MediumParams { d, gamma, gamma_s } = *self;
        if !(d.is_finite() && gamma.is_finite() && gamma_s.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite medium parameter".into(),
            ));
        }
        if d < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "negative optical depth d = {d}"
            )));
        }
        if gamma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if gamma_s < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "negative spin decay rate gamma_s = {gamma_s}"
            )));
        }
        if gamma_s >= gamma {
            return Err(Error::InvalidParameter(format!(
                "gamma_s = {gamma_s} must be smaller than gamma = {gamma}"
            )));
        }
        Ok(())
    }
}

/// A uniform sampling of a time interval: `start + k * dt` for `k < count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: f64,
    pub dt: f64,
    pub count: usize,
}

impl TimeWindow {
    pub fn new(start: f64, dt: f64, count: usize) -> Self {
        TimeWindow { start, dt, count }
    }

    /// Time of the last sample.
    pub fn end(&self) -> f64 {
        self.start + self.duration()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.count.saturating_sub(1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + self.dt * k as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |k| self.time(k))
    }

    /// Nearest sample index to `t`, clamped to the window.
    pub fn nearest_index(&self, t: f64) -> usize {
        let k = ((t - self.start) / self.dt).round();
        k.clamp(0.0, self.count.saturating_sub(1) as f64) as usize
    }

    /// True if both windows describe the same samples (up to rounding).
    pub fn same_as(&self, other: &TimeWindow) -> bool {
        let tol = 1e-9 * self.dt.abs().max(other.dt.abs());
        self.count == other.count
            && (self.dt - other.dt).abs() <= tol
            && (self.start - other.start).abs() <= tol * (1.0 + self.count as f64)
    }

    /// True if both windows have the same length and step.
    pub fn same_shape(&self, other: &TimeWindow) -> bool {
        self.count == other.count && (self.dt - other.dt).abs() <= 1e-9 * self.dt.abs()
    }
}

/// Time and space discretization of one write/store/retrieve cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t_write: f64,
    pub tau: f64,
    pub t_retrieve: f64,
    pub dt: f64,
    pub nz: usize,
    /// Adjustments made when window durations were rounded to multiples of `dt`.
    #[serde(default)]
    pub adjustments: Vec<String>,
}

impl Grid {
    /// Minimum number of write-window steps used by the default grids.
    pub const DEFAULT_WRITE_STEPS: usize = 400;
    pub const DEFAULT_NZ: usize = 200;
    /// Target `dt * gamma * (1 + d)` for [`Grid::default_for`].
    pub const DEFAULT_STIFFNESS: f64 = 1.0;

    /// Builds a grid, rounding the write and retrieve durations to the
    /// nearest positive multiple of `dt`. The storage time is applied
    /// analytically and is kept as given.
    pub fn new(t_write: f64, tau: f64, t_retrieve: f64, dt: f64, nz: usize) -> Result<Self> {
        for (name, v) in [("t_write", t_write), ("t_retrieve", t_retrieve), ("dt", dt)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "tau must be non-negative, got {tau}"
            )));
        }
        if nz < 2 {
            return Err(Error::InvalidParameter(format!(
                "nz must be at least 2, got {nz}"
            )));
        }
        let mut adjustments = Vec::new();
        let mut snap = |name: &str, v: f64| {
            let steps = (v / dt).round().max(1.0);
            let snapped = steps * dt;
            if (snapped - v).abs() > GRID_SNAP_TOL * v {
                adjustments.push(format!("{name} rounded from {v} to {snapped}"));
            }
            snapped
        };
        let t_write = snap("t_write", t_write);
        let t_retrieve = snap("t_retrieve", t_retrieve);
        Ok(Grid {
            t_write,
            tau,
            t_retrieve,
            dt,
            nz,
            adjustments,
        })
    }

    /// Grid with `DEFAULT_WRITE_STEPS` steps across the write window and
    /// `DEFAULT_NZ` spatial nodes.
    pub fn with_default_steps(t_write: f64, tau: f64, t_retrieve: f64) -> Result<Self> {
        let dt = t_write / Self::DEFAULT_WRITE_STEPS as f64;
        Self::new(t_write, tau, t_retrieve, dt, Self::DEFAULT_NZ)
    }

    /// Default grid for a given medium: at least `DEFAULT_WRITE_STEPS` steps,
    /// and more when needed to keep `dt * gamma * (1 + d)` at or below
    /// `DEFAULT_STIFFNESS`.
    pub fn default_for(
        params: &MediumParams,
        t_write: f64,
        tau: f64,
        t_retrieve: f64,
    ) -> Result<Self> {
        let dt = Self::default_dt(params, t_write);
        Self::new(t_write, tau, t_retrieve, dt, Self::DEFAULT_NZ)
    }

    fn default_dt(params: &MediumParams, t_write: f64) -> f64 {
        let stiff_steps =
            (t_write * params.gamma * (1.0 + params.d) / Self::DEFAULT_STIFFNESS).ceil();
        let steps = if stiff_steps.is_finite() {
            stiff_steps.max(Self::DEFAULT_WRITE_STEPS as f64)
        } else {
            Self::DEFAULT_WRITE_STEPS as f64
        };
        t_write / steps
    }

    pub fn write_steps(&self) -> usize {
        (self.t_write / self.dt).round() as usize
    }

    pub fn retrieve_steps(&self) -> usize {
        (self.t_retrieve / self.dt).round() as usize
    }

    /// Write window `[-T, 0]`.
    pub fn write_window(&self) -> TimeWindow {
        let n = self.write_steps();
        TimeWindow::new(-(n as f64) * self.dt, self.dt, n + 1)
    }

    /// Retrieve window `[tau, tau + T_r]`.
    pub fn retrieve_window(&self) -> TimeWindow {
        TimeWindow::new(self.tau, self.dt, self.retrieve_steps() + 1)
    }

    pub fn dz(&self) -> f64 {
        1.0 / (self.nz - 1) as f64
    }

    /// The same grid with both step sizes halved.
    pub fn refined(&self) -> Self {
        Grid {
            dt: self.dt / 2.0,
            nz: 2 * self.nz - 1,
            adjustments: self.adjustments.clone(),
            ..*self
        }
    }
}

/// A complex waveform sampled on a uniform time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    window: TimeWindow,
    samples: Vec<C64>,
}

impl Envelope {
    pub fn new(window: TimeWindow, samples: Vec<C64>) -> Result<Self> {
        if samples.len() != window.count {
            return Err(Error::WindowMismatch(format!(
                "{} samples for a window of {}",
                samples.len(),
                window.count
            )));
        }
        if window.count == 0 {
            return Err(Error::InvalidParameter("empty window".into()));
        }
        if !(window.dt.is_finite() && window.dt > 0.0 && window.start.is_finite()) {
            return Err(Error::InvalidParameter(
                "window must have a finite positive step".into(),
            ));
        }
        Ok(Envelope { window, samples })
    }

    pub fn zeros(window: TimeWindow) -> Self {
        Envelope {
            window,
            samples: vec![C64::new(0.0, 0.0); window.count],
        }
    }

    pub fn from_fn(window: TimeWindow, f: impl Fn(f64) -> C64) -> Self {
        let samples = window.times().map(f).collect();
        Envelope { window, samples }
    }

    pub fn from_real(window: TimeWindow, values: &[f64]) -> Result<Self> {
        Self::new(window, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [C64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<C64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `sum |s|^2 dt`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * self.window.dt
    }

    /// `sum |s|^2 dt` restricted to samples at `t < cutoff`.
    pub fn energy_before(&self, cutoff: f64) -> f64 {
        self.window
            .times()
            .zip(&self.samples)
            .filter(|(t, _)| *t < cutoff)
            .map(|(_, s)| s.norm_sqr())
            .sum::<f64>()
            * self.window.dt
    }

    pub fn is_finite(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.re.is_finite() && s.im.is_finite())
    }

    pub fn peak_abs(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Envelope {
            window: self.window,
            samples: self.samples.iter().map(|s| s * factor).collect(),
        }
    }

    /// Pointwise sum; both envelopes must share a window.
    pub fn add(&self, other: &Envelope) -> Result<Self> {
        if !self.window.same_as(&other.window) {
            return Err(Error::WindowMismatch(
                "cannot add envelopes on different windows".into(),
            ));
        }
        Ok(Envelope {
            window: self.window,
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// `int |s|^2 dt` by the trapezoidal rule.
    pub fn energy_trapezoid(&self) -> f64 {
        trapezoid(self.samples.iter().map(|s| s.norm_sqr()), self.window.dt)
    }
}

/// Trapezoidal integral of uniformly spaced values.
pub(crate) fn trapezoid(values: impl ExactSizeIterator<Item = f64>, h: f64) -> f64 {
    let n = values.len();
    let mut acc = 0.0;
    for (k, v) in values.enumerate() {
        let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
        acc += w * v;
    }
    acc * h
}

/// Fields inside the medium at one instant: `E(z)`, `P(z)`, `S(z)` on the
/// spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub e: Vec<C64>,
    pub p: Vec<C64>,
    pub s: Vec<C64>,
}

impl FieldState {
    /// All fields zero; the state at the start of the write stage.
    pub fn empty(nz: usize) -> Self {
        let zero = vec![C64::new(0.0, 0.0); nz];
        FieldState {
            e: zero.clone(),
            p: zero.clone(),
            s: zero,
        }
    }

    /// A stored spin wave with no optical excitation.
    pub fn from_spin_wave(spin_wave: &[C64]) -> Self {
        let zero = vec![C64::new(0.0, 0.0); spin_wave.len()];
        FieldState {
            e: zero.clone(),
            p: zero,
            s: spin_wave.to_vec(),
        }
    }

    pub fn nz(&self) -> usize {
        self.s.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub message: String,
}

/// Outcome of [`validate_params`]: hard failures and advisory warnings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.issues.iter().all(|i| i.severity == Severity::Warning)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Warning)
    }

    pub fn has_warning(&self, needle: &str) -> bool {
        self.warnings().any(|w| w.message.contains(needle))
    }

    pub fn into_result(self) -> Result<Self> {
        let first = self.errors().next().map(|e| e.message.clone());
        match first {
            Some(message) => Err(Error::InvalidParameter(message)),
            None => Ok(self),
        }
    }

    fn error(&mut self, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Error,
            message: message.into(),
        });
    }

    fn warn(&mut self, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Warning,
            message: message.into(),
        });
    }
}

pub const WARN_STIFF: &str = "time step exceeds stiffness bound";
pub const WARN_INCOMPLETE_RETRIEVAL: &str =
    "retrieval control energy insufficient for complete retrieval";

/// Checks a medium/grid/control combination before any simulation.
///
/// `control` is the write-stage control; the retrieval control is its time
/// reverse and carries the same energy.
pub fn validate_params(params: &MediumParams, grid: &Grid, control: &Envelope) -> ValidationReport {
    let mut report = ValidationReport::default();
    let MediumParams { d, gamma, gamma_s } = *params;

    if !(d.is_finite() && gamma.is_finite() && gamma_s.is_finite()) {
        report.error("non-finite medium parameter");
    } else {
        if d < 0.0 {
            report.error(format!("negative optical depth d = {d}"));
        }
        if gamma <= 0.0 {
            report.error(format!("gamma must be positive, got {gamma}"));
        }
        if gamma_s < 0.0 {
            report.error(format!("negative spin decay rate gamma_s = {gamma_s}"));
        }
        if gamma > 0.0 && gamma_s >= gamma {
            report.error(format!(
                "gamma_s = {gamma_s} must be smaller than gamma = {gamma}"
            ));
        }
    }

    let grid_values = [grid.t_write, grid.tau, grid.t_retrieve, grid.dt];
    if grid_values.iter().any(|v| !v.is_finite()) {
        report.error("non-finite grid value");
    } else {
        if grid.t_write <= 0.0 || grid.t_retrieve <= 0.0 {
            report.error("empty time window");
        }
        if grid.dt <= 0.0 {
            report.error("time step must be positive");
        }
        if grid.tau < 0.0 {
            report.error("negative storage time");
        }
    }
    if grid.nz < 2 {
        report.error("at least two spatial nodes are required");
    }

    if control.is_empty() {
        report.error("empty control window");
    } else if !control.is_finite() {
        report.error("non-finite control samples");
    } else if !report.passed() {
        // Skip derived checks on inconsistent input.
    } else {
        if !control.window().same_as(&grid.write_window()) {
            report.error("control window does not match the write window");
        }
        let stiffness = grid.dt * gamma * (1.0 + d);
        if stiffness > STIFFNESS_BOUND {
            report.warn(format!(
                "{WARN_STIFF}: dt*gamma*(1+d) = {stiffness:.3} > {STIFFNESS_BOUND} (full model)"
            ));
        }
        let pulse_area = control.energy_trapezoid() / gamma;
        // Slack for controls set to exactly the threshold, e.g. Omega = sqrt(3).
        if pulse_area < COMPLETE_RETRIEVAL_FACTOR * d * (1.0 - 1e-9) {
            report.warn(format!(
                "{WARN_INCOMPLETE_RETRIEVAL}: int|Omega|^2 dt/gamma = {pulse_area:.3} < {COMPLETE_RETRIEVAL_FACTOR}*d"
            ));
        }
    }
    report
}

/// EIT figures of merit for a given control strength and signal duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// EIT transparency bandwidth, `sqrt(d) * v_g / L`.
    pub delta_omega_eit: f64,
    /// Group velocity in units of medium lengths per unit time, `Omega^2 / (d gamma)`.
    pub vg_over_l: f64,
    /// `v_g t_s / L`; small when the whole pulse fits inside the medium.
    pub compression_ratio: f64,
    /// `1 / (t_s * delta_omega_eit)`; small when the pulse fits in the EIT window.
    pub bandwidth_ratio: f64,
    /// Set when the control is zero and the bandwidth ratio is infinite.
    pub zero_control: bool,
}

impl Diagnostics {
    pub fn favorable(&self, threshold: f64) -> bool {
        self.compression_ratio < threshold && self.bandwidth_ratio < threshold
    }
}

pub fn eit_diagnostics(
    params: &MediumParams,
    control_peak: f64,
    signal_duration: f64,
) -> Result<Diagnostics> {
    if !(control_peak.is_finite() && control_peak >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "control peak must be non-negative, got {control_peak}"
        )));
    }
    if !(signal_duration.is_finite() && signal_duration > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "signal duration must be positive, got {signal_duration}"
        )));
    }
    let MediumParams { d, gamma, .. } = *params;
    if !(d > 0.0 && gamma > 0.0) {
        return Err(Error::InvalidParameter(
            "diagnostics need d > 0 and gamma > 0".into(),
        ));
    }
    let vg_over_l = control_peak * control_peak / (d * gamma);
    let delta_omega_eit = d.sqrt() * vg_over_l;
    let zero_control = control_peak == 0.0;
    let bandwidth_ratio = if zero_control {
        f64::INFINITY
    } else {
        1.0 / (signal_duration * delta_omega_eit)
    };
    Ok(Diagnostics {
        delta_omega_eit,
        vg_over_l,
        compression_ratio: vg_over_l * signal_duration,
        bandwidth_ratio,
        zero_control,
    })
}

/// Cell description in laboratory units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub length: f64,
    pub optical_depth: f64,
}

/// Decay rates in laboratory units (1/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub gamma: f64,
    pub gamma_s: f64,
}

/// Stage durations in laboratory units (s). `dt` defaults to the step
/// chosen by [`Grid::default_for`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Times {
    pub t_write: f64,
    pub tau: f64,
    pub t_retrieve: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub nz: Option<usize>,
}

/// Units used to convert between laboratory and dimensionless quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    /// Physical duration of one dimensionless time unit (`1/gamma`).
    pub time_unit: f64,
    /// Physical cell length.
    pub length: f64,
}

impl Scales {
    pub fn to_physical_time(&self, t: f64) -> f64 {
        t * self.time_unit
    }

    pub fn to_physical_rate(&self, r: f64) -> f64 {
        r / self.time_unit
    }

    pub fn to_physical_position(&self, z: f64) -> f64 {
        z * self.length
    }
}

/// Rescales laboratory values: time by `gamma` (so gamma becomes 1) and
/// position by the cell length.
pub fn from_experimental(
    cell: Cell,
    rates: Rates,
    times: Times,
) -> Result<(MediumParams, Grid, Scales)> {
    let positive = [
        ("length", cell.length),
        ("optical_depth", cell.optical_depth),
        ("gamma", rates.gamma),
        ("t_write", times.t_write),
        ("tau", times.tau),
        ("t_retrieve", times.t_retrieve),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    if !(rates.gamma_s.is_finite() && rates.gamma_s >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma_s must be non-negative, got {}",
            rates.gamma_s
        )));
    }
    if let Some(dt) = times.dt {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {dt}"
            )));
        }
    }
    let scales = Scales {
        time_unit: 1.0 / rates.gamma,
        length: cell.length,
    };
    let params = MediumParams::new(cell.optical_depth, 1.0, rates.gamma_s * scales.time_unit)?;
    let t_write = times.t_write / scales.time_unit;
    let dt = times
        .dt
        .map(|dt| dt / scales.time_unit)
        .unwrap_or_else(|| Grid::default_dt(&params, t_write));
    let grid = Grid::new(
        t_write,
        times.tau / scales.time_unit,
        times.t_retrieve / scales.time_unit,
        dt,
        times.nz.unwrap_or(Grid::DEFAULT_NZ),
    )?;
    Ok((params, grid, scales))
}
