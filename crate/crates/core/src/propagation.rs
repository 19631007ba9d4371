//! Write, storage and retrieval stages of the stored-light dynamics.
//!
//! Two integrators are provided:
//!
//! * [`solve_full`] keeps the optical polarization `P` as a dynamical
//!   variable. At every time the signal field is recovered from `P` by
//!   trapezoidal integration of `dE/dz = i sqrt(d) P` starting from the inflow
//!   value `E(0, t)`; `P` and `S` are advanced at every node with classical
//!   RK4. Boundary and control values between samples are linearly
//!   interpolated, so the scheme is second order in `dt`.
//! * [`solve_adiabatic`] sets `dP/dt = 0`, i.e.
//!   `P = i sqrt(d) E + i Omega S / gamma`, which leaves
//!
//!   ```text
//!   dE/dz = -d E - sqrt(d) (Omega / gamma) S
//!   dS/dt = -(gamma_s + |Omega|^2 / gamma) S - sqrt(d) conj(Omega) E
//!   ```
//!
//!   The `z` equation is integrated exactly for piecewise-linear `S`, so a
//!   pulse without control is attenuated by exactly `exp(-d)`.
//!
//! Every stage closes an [`EnergyLedger`] computed from the identity
//!
//! ```text
//! gamma int|E(0)|^2 dt + X(start) = gamma int|E(1)|^2 dt
//!     + 2 gamma int int |P|^2 + 2 gamma_s int int |S|^2 + X(end)
//! ```
//!
//! with `X = int (|P|^2 + |S|^2) dz` (only `|S|^2` in the adiabatic model,
//! where `P` carries no energy of its own). Time integrals use the
//! trapezoidal rule, space integrals the trapezoidal rule on the `z` nodes.

use std::io::Write;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{trapezoid, Envelope, FieldState, Grid, MediumParams, TimeWindow};

/// Amplitudes beyond this are treated as a numerical blow-up.
const DIVERGENCE_LIMIT: f64 = 1e100;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Full,
    Adiabatic,
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Solver::Full),
            "adiabatic" => Ok(Solver::Adiabatic),
            other => Err(Error::Parse(format!(
                "unknown solver '{other}' (expected full or adiabatic)"
            ))),
        }
    }
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Solver::Full => "full",
            Solver::Adiabatic => "adiabatic",
        })
    }
}

/// Energy bookkeeping for one stage, in units where a pulse carries
/// `gamma * int |E|^2 dt`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// Energy delivered through the `z = 0` boundary.
    pub in_energy: f64,
    /// Excitation present in the medium when the stage starts.
    pub initial_excitation: f64,
    /// Energy leaving through `z = 1` (leakage while writing, output while retrieving).
    pub leaked_or_out_energy: f64,
    pub p_dissipated: f64,
    pub s_dissipated: f64,
    /// `int (|P|^2 + |S|^2) dz` at the end of the stage.
    pub stored_excitation: f64,
    /// Signal energy held inside the medium at the end of the stage. The
    /// comoving-frame field has no storage capacity, so this is zero for both
    /// integrators; the term is kept so that ledgers from other models line up.
    pub field_in_medium: f64,
}

impl EnergyLedger {
    pub fn supplied(&self) -> f64 {
        self.in_energy + self.initial_excitation
    }

    pub fn accounted(&self) -> f64 {
        self.leaked_or_out_energy
            + self.p_dissipated
            + self.s_dissipated
            + self.stored_excitation
            + self.field_in_medium
    }

    pub fn imbalance(&self) -> f64 {
        self.supplied() - self.accounted()
    }

    /// `|imbalance| / supplied`, or zero when nothing was supplied.
    pub fn relative_imbalance(&self) -> f64 {
        let supplied = self.supplied();
        if supplied > 0.0 {
            self.imbalance().abs() / supplied
        } else {
            self.imbalance().abs()
        }
    }

    pub fn dissipated(&self) -> f64 {
        self.p_dissipated + self.s_dissipated
    }
}

/// Outcome of one write or retrieve stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    /// `S(z)` at the end of the stage.
    pub spin_wave: Vec<C64>,
    /// `P(z)` at the end of the stage; discarded at the stage hand-off.
    pub polarization: Vec<C64>,
    /// `E(1, t)` over the stage window.
    pub boundary_out: Envelope,
    pub ledger: EnergyLedger,
}

/// Fields at one sample time, handed to trajectory observers.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub e: &'a [C64],
    pub p: &'a [C64],
    pub s: &'a [C64],
}

pub type Observer<'a> = &'a mut dyn FnMut(&StepView<'_>);

/// Write stage on `[-T, 0]`: empty medium, `E(0, t) = input`.
pub fn write_stage(
    params: &MediumParams,
    grid: &Grid,
    control: &Envelope,
    input: &Envelope,
    solver: Solver,
) -> Result<StageResult> {
    let window = grid.write_window();
    expect_window("write control", control, &window)?;
    expect_window("write input", input, &window)?;
    solve(
        solver,
        &FieldState::empty(grid.nz),
        params,
        control,
        Some(input),
        None,
    )
}

/// Free evolution of a stored spin wave with the control off.
///
/// # Panics
///
/// If `tau` is negative.
pub fn storage_decay(spin_wave: &[C64], tau: f64, gamma_s: f64) -> Vec<C64> {
    assert!(tau >= 0.0, "storage time must be non-negative");
    let factor = (-gamma_s * tau).exp();
    spin_wave.iter().map(|s| s * factor).collect()
}

/// Retrieve stage on `[tau, tau + T_r]`: no input, medium holds `spin_wave`.
pub fn retrieve_stage(
    params: &MediumParams,
    grid: &Grid,
    control: &Envelope,
    spin_wave: &[C64],
    solver: Solver,
) -> Result<StageResult> {
    let window = grid.retrieve_window();
    expect_window("retrieve control", control, &window)?;
    if spin_wave.len() != grid.nz {
        return Err(Error::WindowMismatch(format!(
            "spin wave has {} nodes, grid has {}",
            spin_wave.len(),
            grid.nz
        )));
    }
    solve(
        solver,
        &FieldState::from_spin_wave(spin_wave),
        params,
        control,
        None,
        None,
    )
}

fn expect_window(what: &str, env: &Envelope, window: &TimeWindow) -> Result<()> {
    if env.window().same_as(window) {
        Ok(())
    } else {
        Err(Error::WindowMismatch(format!(
            "{what} window {:?} does not match stage window {:?}",
            env.window(),
            window
        )))
    }
}

/// Integrates one stage over the control's window with the chosen model.
pub fn solve(
    solver: Solver,
    initial: &FieldState,
    params: &MediumParams,
    control: &Envelope,
    boundary: Option<&Envelope>,
    observer: Option<Observer<'_>>,
) -> Result<StageResult> {
    match solver {
        Solver::Full => solve_full(initial, params, control, boundary, observer),
        Solver::Adiabatic => solve_adiabatic(initial, params, control, boundary, observer),
    }
}

/// Full three-field model. `boundary` is `E(0, t)` on the control window
/// (zero when `None`).
pub fn solve_full(
    initial: &FieldState,
    params: &MediumParams,
    control: &Envelope,
    boundary: Option<&Envelope>,
    observer: Option<Observer<'_>>,
) -> Result<StageResult> {
    let model = FullModel::new(params, initial.nz())?;
    let mut y = initial.p.clone();
    y.extend_from_slice(&initial.s);
    integrate(&model, y, params, control, boundary, observer)
}

/// Reduced model with `P` adiabatically eliminated. Only `initial.s` is used.
pub fn solve_adiabatic(
    initial: &FieldState,
    params: &MediumParams,
    control: &Envelope,
    boundary: Option<&Envelope>,
    observer: Option<Observer<'_>>,
) -> Result<StageResult> {
    let model = AdiabaticModel::new(params, initial.nz())?;
    integrate(
        &model,
        initial.s.clone(),
        params,
        control,
        boundary,
        observer,
    )
}

/// Spatial right-hand side of a model, evaluated at fixed boundary and control
/// values.
trait Dynamics {
    fn nz(&self) -> usize;

    /// `dy/dt` for state `y`; `e` is scratch for the signal field.
    fn rhs(&self, e_in: C64, omega: C64, y: &[C64], e: &mut [C64], dy: &mut [C64]);

    /// Reconstructs `E`, `P`, `S` from the state.
    fn fields(&self, e_in: C64, omega: C64, y: &[C64], e: &mut [C64], p: &mut [C64], s: &mut [C64]);

    /// Whether `|P|^2` counts as stored excitation.
    fn polarization_stores_energy(&self) -> bool;
}

struct FullModel {
    nz: usize,
    gamma: f64,
    gamma_s: f64,
    /// `i sqrt(d) gamma`
    drive: C64,
    /// `i sqrt(d) dz / 2`
    half_step: C64,
}

impl FullModel {
    fn new(params: &MediumParams, nz: usize) -> Result<Self> {
        params.check()?;
        check_nodes(nz)?;
        let dz = 1.0 / (nz - 1) as f64;
        let sqrt_d = params.d.sqrt();
        Ok(FullModel {
            nz,
            gamma: params.gamma,
            gamma_s: params.gamma_s,
            drive: I * (sqrt_d * params.gamma),
            half_step: I * (0.5 * sqrt_d * dz),
        })
    }

    fn field(&self, e_in: C64, p: &[C64], e: &mut [C64]) {
        e[0] = e_in;
        for j in 1..self.nz {
            e[j] = e[j - 1] + self.half_step * (p[j - 1] + p[j]);
        }
    }
}

impl Dynamics for FullModel {
    fn nz(&self) -> usize {
        self.nz
    }

    fn rhs(&self, e_in: C64, omega: C64, y: &[C64], e: &mut [C64], dy: &mut [C64]) {
        let (p, s) = y.split_at(self.nz);
        self.field(e_in, p, e);
        let (dp, ds) = dy.split_at_mut(self.nz);
        let i_omega = I * omega;
        let i_omega_c = I * omega.conj();
        for j in 0..self.nz {
            dp[j] = -self.gamma * p[j] + self.drive * e[j] + i_omega * s[j];
            ds[j] = -self.gamma_s * s[j] + i_omega_c * p[j];
        }
    }

    fn fields(
        &self,
        e_in: C64,
        _omega: C64,
        y: &[C64],
        e: &mut [C64],
        p: &mut [C64],
        s: &mut [C64],
    ) {
        let (py, sy) = y.split_at(self.nz);
        self.field(e_in, py, e);
        p.copy_from_slice(py);
        s.copy_from_slice(sy);
    }

    fn polarization_stores_energy(&self) -> bool {
        true
    }
}

struct AdiabaticModel {
    nz: usize,
    gamma: f64,
    gamma_s: f64,
    sqrt_d: f64,
    /// `exp(-d dz)`
    decay: f64,
    /// Exact weights of `S(z_{j-1})` and `S(z_j)` in
    /// `int_0^dz exp(-d (dz - u)) S(z_{j-1} + u) du` for linear `S`.
    w_prev: f64,
    w_next: f64,
}

impl AdiabaticModel {
    fn new(params: &MediumParams, nz: usize) -> Result<Self> {
        params.check()?;
        check_nodes(nz)?;
        let h = 1.0 / (nz - 1) as f64;
        let x = params.d * h;
        let (w_prev, w_next) = if x < 1e-4 {
            (
                h * (0.5 - x / 3.0 + x * x / 8.0),
                h * (0.5 - x / 6.0 + x * x / 24.0),
            )
        } else {
            let em = (-x).exp();
            let w_prev = h * (1.0 - em * (1.0 + x)) / (x * x);
            let w_total = h * (-(-x).exp_m1()) / x;
            (w_prev, w_total - w_prev)
        };
        Ok(AdiabaticModel {
            nz,
            gamma: params.gamma,
            gamma_s: params.gamma_s,
            sqrt_d: params.d.sqrt(),
            decay: (-x).exp(),
            w_prev,
            w_next,
        })
    }

    fn field(&self, e_in: C64, omega: C64, s: &[C64], e: &mut [C64]) {
        let coupling = omega * (self.sqrt_d / self.gamma);
        e[0] = e_in;
        for j in 1..self.nz {
            e[j] = self.decay * e[j - 1] - coupling * (self.w_prev * s[j - 1] + self.w_next * s[j]);
        }
    }
}

impl Dynamics for AdiabaticModel {
    fn nz(&self) -> usize {
        self.nz
    }

    fn rhs(&self, e_in: C64, omega: C64, y: &[C64], e: &mut [C64], dy: &mut [C64]) {
        self.field(e_in, omega, y, e);
        let rate = self.gamma_s + omega.norm_sqr() / self.gamma;
        let feed = omega.conj() * self.sqrt_d;
        for j in 0..self.nz {
            dy[j] = -rate * y[j] - feed * e[j];
        }
    }

    fn fields(
        &self,
        e_in: C64,
        omega: C64,
        y: &[C64],
        e: &mut [C64],
        p: &mut [C64],
        s: &mut [C64],
    ) {
        self.field(e_in, omega, y, e);
        let slaved = I * omega / self.gamma;
        for j in 0..self.nz {
            p[j] = I * self.sqrt_d * e[j] + slaved * y[j];
        }
        s.copy_from_slice(y);
    }

    fn polarization_stores_energy(&self) -> bool {
        false
    }
}

fn check_nodes(nz: usize) -> Result<()> {
    if nz < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two spatial nodes, got {nz}"
        )));
    }
    Ok(())
}

/// Instantaneous ledger rates at one sample.
struct Rates {
    flux_in: f64,
    flux_out: f64,
    p_loss: f64,
    s_loss: f64,
}

fn integrate<D: Dynamics>(
    model: &D,
    mut y: Vec<C64>,
    params: &MediumParams,
    control: &Envelope,
    boundary: Option<&Envelope>,
    mut observer: Option<Observer<'_>>,
) -> Result<StageResult> {
    let window = control.window();
    if let Some(b) = boundary {
        if !b.window().same_as(&window) {
            return Err(Error::WindowMismatch(
                "boundary and control windows differ".into(),
            ));
        }
    }
    let nz = model.nz();
    let n = window.count;
    let h = window.dt;
    let dz = 1.0 / (nz - 1) as f64;
    let z_weights: Vec<f64> = (0..nz)
        .map(|j| if j == 0 || j + 1 == nz { 0.5 * dz } else { dz })
        .collect();
    let stored_of = |p: &[C64], s: &[C64]| -> f64 {
        let mut acc = 0.0;
        for j in 0..nz {
            acc += z_weights[j] * s[j].norm_sqr();
            if model.polarization_stores_energy() {
                acc += z_weights[j] * p[j].norm_sqr();
            }
        }
        acc
    };
    let e_in_at = |k: usize| boundary.map_or(ZERO, |b| b.samples()[k]);
    let omega_at = |k: usize| control.samples()[k];

    let mut e = vec![ZERO; nz];
    let mut p = vec![ZERO; nz];
    let mut s = vec![ZERO; nz];
    let mut out = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);

    let mut sample = |k: usize, y: &[C64], e: &mut [C64], p: &mut [C64], s: &mut [C64]| -> Rates {
        model.fields(e_in_at(k), omega_at(k), y, e, p, s);
        let mut p_sq = 0.0;
        let mut s_sq = 0.0;
        for j in 0..nz {
            p_sq += z_weights[j] * p[j].norm_sqr();
            s_sq += z_weights[j] * s[j].norm_sqr();
        }
        if let Some(obs) = observer.as_mut() {
            obs(&StepView {
                step: k,
                t: window.time(k),
                e,
                p,
                s,
            });
        }
        Rates {
            flux_in: params.gamma * e[0].norm_sqr(),
            flux_out: params.gamma * e[nz - 1].norm_sqr(),
            p_loss: 2.0 * params.gamma * p_sq,
            s_loss: 2.0 * params.gamma_s * s_sq,
        }
    };

    rates.push(sample(0, &y, &mut e, &mut p, &mut s));
    out.push(e[nz - 1]);
    let initial_excitation = stored_of(&p, &s);

    let m = y.len();
    let mut k1 = vec![ZERO; m];
    let mut k2 = vec![ZERO; m];
    let mut k3 = vec![ZERO; m];
    let mut k4 = vec![ZERO; m];
    let mut tmp = vec![ZERO; m];
    let mut scratch = vec![ZERO; nz];

    for k in 0..n.saturating_sub(1) {
        let (u0, u1) = (e_in_at(k), e_in_at(k + 1));
        let (w0, w1) = (omega_at(k), omega_at(k + 1));
        let (u_mid, w_mid) = (0.5 * (u0 + u1), 0.5 * (w0 + w1));

        model.rhs(u0, w0, &y, &mut scratch, &mut k1);
        axpy(&y, 0.5 * h, &k1, &mut tmp);
        model.rhs(u_mid, w_mid, &tmp, &mut scratch, &mut k2);
        axpy(&y, 0.5 * h, &k2, &mut tmp);
        model.rhs(u_mid, w_mid, &tmp, &mut scratch, &mut k3);
        axpy(&y, h, &k3, &mut tmp);
        model.rhs(u1, w1, &tmp, &mut scratch, &mut k4);
        for i in 0..m {
            y[i] += (h / 6.0) * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }

        if let Some(bad) = y.iter().position(|v| !(v.norm() < DIVERGENCE_LIMIT)) {
            return Err(Error::Diverged {
                step: k + 1,
                time: window.time(k + 1),
                detail: format!("state component {bad} is {}", y[bad]),
            });
        }

        rates.push(sample(k + 1, &y, &mut e, &mut p, &mut s));
        out.push(e[nz - 1]);
    }

    let integrate_rate = |f: fn(&Rates) -> f64| trapezoid(rates.iter().map(f), h);
    let ledger = EnergyLedger {
        in_energy: integrate_rate(|r| r.flux_in),
        initial_excitation,
        leaked_or_out_energy: integrate_rate(|r| r.flux_out),
        p_dissipated: integrate_rate(|r| r.p_loss),
        s_dissipated: integrate_rate(|r| r.s_loss),
        stored_excitation: stored_of(&p, &s),
        field_in_medium: 0.0,
    };
    Ok(StageResult {
        spin_wave: s,
        polarization: p,
        boundary_out: Envelope::new(window, out)?,
        ledger,
    })
}

fn axpy(y: &[C64], a: f64, x: &[C64], out: &mut [C64]) {
    for i in 0..y.len() {
        out[i] = y[i] + a * x[i];
    }
}

/// CSV trajectory dump with columns `step,t,z,e_re,e_im,p_re,p_im,s_re,s_im`.
/// Every `time_stride`-th sample and every `z_stride`-th node is written.
pub struct TrajectoryCsv<W: Write> {
    out: W,
    time_stride: usize,
    z_stride: usize,
    error: Option<std::io::Error>,
}

impl<W: Write> TrajectoryCsv<W> {
    pub const HEADER: &'static str = "step,t,z,e_re,e_im,p_re,p_im,s_re,s_im";

    pub fn new(
        mut out: W,
        preamble: &[String],
        time_stride: usize,
        z_stride: usize,
    ) -> Result<Self> {
        for line in preamble {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "{}", Self::HEADER)?;
        Ok(TrajectoryCsv {
            out,
            time_stride: time_stride.max(1),
            z_stride: z_stride.max(1),
            error: None,
        })
    }

    pub fn record(&mut self, view: &StepView<'_>) {
        if self.error.is_some() || !view.step.is_multiple_of(self.time_stride) {
            return;
        }
        let nz = view.s.len();
        let dz = 1.0 / (nz - 1) as f64;
        for j in (0..nz).step_by(self.z_stride) {
            let res = writeln!(
                self.out,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                view.step,
                view.t,
                j as f64 * dz,
                view.e[j].re,
                view.e[j].im,
                view.p[j].re,
                view.p[j].im,
                view.s[j].re,
                view.s[j].im
            );
            if let Err(e) = res {
                self.error = Some(e);
                return;
            }
        }
    }

    pub fn finish(mut self) -> Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulses::{build, PulseSpec};

    fn grid() -> Grid {
        Grid::new(30.0, 1.0, 30.0, 0.075, 60).unwrap()
    }

    fn params(d: f64) -> MediumParams {
        MediumParams {
            d,
            gamma: 1.0,
            gamma_s: 0.0,
        }
    }

    fn gaussian(grid: &Grid) -> Envelope {
        build(&PulseSpec::gaussian(-15.0, 3.0, 1.0), grid.write_window()).unwrap()
    }

    fn constant(window: TimeWindow, level: f64) -> Envelope {
        build(&PulseSpec::constant(level), window).unwrap()
    }

    #[test]
    fn storage_decay_cases() {
        let s = vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.0)];
        assert_eq!(storage_decay(&s, 5.0, 0.0), s);
        let decayed = storage_decay(&s, 400e-6, 1.0 / 2e-3);
        let factor = (-0.2f64).exp();
        assert!((factor - 0.8187).abs() < 1e-4);
        assert!((decayed[0] - s[0] * factor).norm() < 1e-15);
        let halved = storage_decay(&s, std::f64::consts::LN_2, 1.0);
        assert!((halved[1] - s[1] * 0.5).norm() < 1e-15);
    }

    #[test]
    fn no_control_means_no_spin_wave_and_attenuated_leakage() {
        let g = grid();
        let d = 2.0;
        // Slowly varying input so that P follows E adiabatically.
        let input = build(&PulseSpec::gaussian(-15.0, 5.0, 1.0), g.write_window()).unwrap();
        let control = constant(g.write_window(), 0.0);
        for solver in [Solver::Full, Solver::Adiabatic] {
            let res = write_stage(&params(d), &g, &control, &input, solver).unwrap();
            assert!(res.spin_wave.iter().all(|s| s.norm() == 0.0));
            let k = g.write_window().nearest_index(-15.0);
            let ratio = res.boundary_out.samples()[k] / input.samples()[k];
            let tol = if solver == Solver::Full { 2e-2 } else { 1e-12 };
            assert!(
                (ratio.re - (-d).exp()).abs() < tol * (-d).exp(),
                "{solver}: {ratio}"
            );
        }
    }

    #[test]
    fn adiabatic_attenuation_is_exact() {
        let g = grid();
        let d = 3.0;
        let input = gaussian(&g);
        let control = constant(g.write_window(), 0.0);
        let res = write_stage(&params(d), &g, &control, &input, Solver::Adiabatic).unwrap();
        for (o, i) in res.boundary_out.samples().iter().zip(input.samples()) {
            assert!((o - i * (-d).exp()).norm() < 1e-14);
        }
    }

    #[test]
    fn vacuum_passes_input_unchanged() {
        let g = grid();
        let input = gaussian(&g);
        let control = constant(g.write_window(), 1.0);
        for solver in [Solver::Full, Solver::Adiabatic] {
            let res = write_stage(&params(0.0), &g, &control, &input, solver).unwrap();
            assert!(res.spin_wave.iter().all(|s| s.norm() == 0.0));
            for (o, i) in res.boundary_out.samples().iter().zip(input.samples()) {
                assert!((o - i).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn write_with_control_stores_and_balances() {
        let g = grid();
        let res = write_stage(
            &params(9.0),
            &g,
            &constant(g.write_window(), 1.0),
            &gaussian(&g),
            Solver::Full,
        )
        .unwrap();
        let stored: f64 = res.spin_wave.iter().map(|s| s.norm_sqr()).sum();
        assert!(stored > 0.0);
        assert!(res.ledger.relative_imbalance() < 1e-3, "{:?}", res.ledger);
        assert!(res.ledger.p_dissipated >= 0.0 && res.ledger.s_dissipated >= 0.0);
    }

    #[test]
    fn retrieval_of_nothing_is_nothing() {
        let g = grid();
        let control = constant(g.retrieve_window(), 1.0);
        for solver in [Solver::Full, Solver::Adiabatic] {
            let res =
                retrieve_stage(&params(9.0), &g, &control, &vec![ZERO; g.nz], solver).unwrap();
            assert!(res.boundary_out.samples().iter().all(|e| e.norm() == 0.0));
        }
    }

    #[test]
    fn retrieval_without_control_only_decays() {
        let g = grid();
        let p = MediumParams {
            d: 9.0,
            gamma: 1.0,
            gamma_s: 0.01,
        };
        let s0: Vec<C64> = (0..g.nz)
            .map(|j| C64::new((j as f64 * 0.1).sin(), 0.3))
            .collect();
        let control = constant(g.retrieve_window(), 0.0);
        for solver in [Solver::Full, Solver::Adiabatic] {
            let res = retrieve_stage(&p, &g, &control, &s0, solver).unwrap();
            assert!(res.boundary_out.samples().iter().all(|e| e.norm() == 0.0));
            let expected = storage_decay(&s0, g.t_retrieve, p.gamma_s);
            for (a, b) in res.spin_wave.iter().zip(&expected) {
                assert!((a - b).norm() < 1e-9, "{solver}");
            }
        }
    }

    #[test]
    fn zero_state_stays_zero() {
        let g = grid();
        let control = constant(g.write_window(), 1.0);
        let res = solve_full(&FieldState::empty(g.nz), &params(9.0), &control, None, None).unwrap();
        assert!(res.boundary_out.samples().iter().all(|e| *e == ZERO));
        assert!(res.spin_wave.iter().all(|s| *s == ZERO));
        assert_eq!(res.ledger, EnergyLedger::default());
    }

    #[test]
    fn window_mismatch_is_rejected() {
        let g = grid();
        let control = constant(g.retrieve_window(), 1.0);
        assert!(matches!(
            write_stage(&params(1.0), &g, &control, &gaussian(&g), Solver::Full),
            Err(Error::WindowMismatch(_))
        ));
        assert!(retrieve_stage(&params(1.0), &g, &control, &[ZERO; 3], Solver::Full).is_err());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let g = Grid::new(300.0, 1.0, 300.0, 3.0, 100).unwrap();
        let control = constant(g.write_window(), 1.0);
        let input = build(&PulseSpec::gaussian(-290.0, 6.0, 1.0), g.write_window()).unwrap();
        let err = write_stage(&params(400.0), &g, &control, &input, Solver::Full).unwrap_err();
        match err {
            Error::Diverged { step, .. } => assert!(step > 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trajectory_dump_writes_requested_rows() {
        let g = Grid::new(3.0, 1.0, 3.0, 0.5, 5).unwrap();
        let control = constant(g.write_window(), 1.0);
        let input = constant(g.write_window(), 1.0);
        let mut dump = TrajectoryCsv::new(Vec::new(), &["config_hash=x".into()], 2, 2).unwrap();
        let mut obs = |v: &StepView<'_>| dump.record(v);
        solve_full(
            &FieldState::empty(g.nz),
            &params(1.0),
            &control,
            Some(&input),
            Some(&mut obs),
        )
        .unwrap();
        let text = String::from_utf8(dump.finish().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config_hash=x");
        assert_eq!(lines[1], TrajectoryCsv::<Vec<u8>>::HEADER);
        // Steps 0, 2, 4, 6 of 7 samples; nodes 0, 2, 4.
        assert_eq!(lines.len(), 2 + 4 * 3);
        assert!(lines[2].starts_with("0,"));
    }

    #[test]
    fn solver_names_parse() {
        assert_eq!("full".parse::<Solver>().unwrap(), Solver::Full);
        assert_eq!("adiabatic".parse::<Solver>().unwrap(), Solver::Adiabatic);
        assert!("rk4".parse::<Solver>().is_err());
    }
}
