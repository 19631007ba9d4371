//! Control and signal pulse construction, time reversal, normalization and
//! shape comparison.

use std::io::{BufRead, Write};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Envelope, TimeWindow};

/// Description of a pulse shape. Times are absolute (same clock as the window
/// the pulse is built on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PulseSpec {
    /// `amplitude * exp(-(t - center)^2 / (2 width^2))`.
    Gaussian {
        center: f64,
        width: f64,
        amplitude: f64,
    },
    /// `level` on `[start, end]` (defaults to the whole window), zero elsewhere.
    Square {
        level: f64,
        #[serde(default)]
        start: Option<f64>,
        #[serde(default)]
        end: Option<f64>,
    },
    /// `first` before `switch_time`, `second` from `switch_time` on.
    TwoStep {
        first: f64,
        second: f64,
        switch_time: f64,
    },
    /// Linear from `from` at the window start to `to` at the window end.
    LinearRamp { from: f64, to: f64 },
    /// Explicit samples; must match the window length.
    FromSamples { samples: Vec<C64> },
}

/// A discontinuity moved onto the sample grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSnap {
    pub requested: f64,
    pub snapped: f64,
}

impl PulseSpec {
    pub fn gaussian(center: f64, width: f64, amplitude: f64) -> Self {
        PulseSpec::Gaussian {
            center,
            width,
            amplitude,
        }
    }

    pub fn constant(level: f64) -> Self {
        PulseSpec::Square {
            level,
            start: None,
            end: None,
        }
    }

    /// Discontinuities of this spec after snapping to `window`, for specs
    /// that have any.
    pub fn snapped_edges(&self, window: &TimeWindow) -> Vec<EdgeSnap> {
        let edges: Vec<f64> = match self {
            PulseSpec::Square { start, end, .. } => {
                start.iter().chain(end.iter()).copied().collect()
            }
            PulseSpec::TwoStep { switch_time, .. } => vec![*switch_time],
            _ => vec![],
        };
        edges
            .into_iter()
            .map(|t| EdgeSnap {
                requested: t,
                snapped: window.time(window.nearest_index(t)),
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "pulse {name} must be finite"
                )))
            }
        };
        match self {
            PulseSpec::Gaussian {
                center,
                width,
                amplitude,
            } => {
                finite("center", *center)?;
                finite("amplitude", *amplitude)?;
                if !(width.is_finite() && *width > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian width must be positive, got {width}"
                    )));
                }
            }
            PulseSpec::Square { level, start, end } => {
                finite("level", *level)?;
                if let (Some(a), Some(b)) = (start, end) {
                    if b < a {
                        return Err(Error::InvalidParameter(
                            "square pulse ends before it starts".into(),
                        ));
                    }
                }
            }
            PulseSpec::TwoStep {
                first,
                second,
                switch_time,
            } => {
                finite("first", *first)?;
                finite("second", *second)?;
                finite("switch_time", *switch_time)?;
            }
            PulseSpec::LinearRamp { from, to } => {
                finite("from", *from)?;
                finite("to", *to)?;
            }
            PulseSpec::FromSamples { samples } => {
                if samples
                    .iter()
                    .any(|s| !(s.re.is_finite() && s.im.is_finite()))
                {
                    return Err(Error::InvalidParameter("non-finite pulse sample".into()));
                }
            }
        }
        Ok(())
    }
}

/// Samples `spec` on `window`. Square and two-step edges land on the nearest
/// sample; the sample at a rising edge takes the new level.
pub fn build(spec: &PulseSpec, window: TimeWindow) -> Result<Envelope> {
    spec.check()?;
    let real = |v: f64| C64::new(v, 0.0);
    match spec {
        PulseSpec::Gaussian {
            center,
            width,
            amplitude,
        } => Ok(Envelope::from_fn(window, |t| {
            let x = (t - center) / width;
            real(amplitude * (-0.5 * x * x).exp())
        })),
        PulseSpec::Square { level, start, end } => {
            let lo = start.map_or(0, |t| window.nearest_index(t));
            let hi = end.map_or(window.count - 1, |t| window.nearest_index(t));
            let samples = (0..window.count)
                .map(|k| {
                    if k >= lo && k <= hi {
                        real(*level)
                    } else {
                        real(0.0)
                    }
                })
                .collect();
            Envelope::new(window, samples)
        }
        PulseSpec::TwoStep {
            first,
            second,
            switch_time,
        } => {
            let jump = window.nearest_index(*switch_time);
            let samples = (0..window.count)
                .map(|k| {
                    if k < jump {
                        real(*first)
                    } else {
                        real(*second)
                    }
                })
                .collect();
            Envelope::new(window, samples)
        }
        PulseSpec::LinearRamp { from, to } => {
            let n = window.count;
            let samples = (0..n)
                .map(|k| {
                    let f = if n > 1 {
                        k as f64 / (n - 1) as f64
                    } else {
                        0.0
                    };
                    real(from + (to - from) * f)
                })
                .collect();
            Envelope::new(window, samples)
        }
        PulseSpec::FromSamples { samples } => Envelope::new(window, samples.clone()),
    }
}

/// Maps `env` onto `new_window` reversed in time and complex conjugated:
/// `out(t) = conj(in(end - (t - new_start)))`.
pub fn time_reverse(env: &Envelope, new_window: TimeWindow) -> Result<Envelope> {
    if !env.window().same_shape(&new_window) {
        return Err(Error::WindowMismatch(format!(
            "time reversal needs equal durations: {} samples of {} vs {} samples of {}",
            env.len(),
            env.window().dt,
            new_window.count,
            new_window.dt
        )));
    }
    let samples = env.samples().iter().rev().map(|s| s.conj()).collect();
    Envelope::new(new_window, samples)
}

/// Rescales `env` so that its energy equals `target_energy`.
pub fn normalize_energy(env: &Envelope, target_energy: f64) -> Result<Envelope> {
    if !(target_energy.is_finite() && target_energy > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target energy must be positive, got {target_energy}"
        )));
    }
    let energy = env.energy();
    if !(energy > 0.0 && energy.is_finite()) {
        return Err(Error::DegenerateRetrieval(format!(
            "cannot normalize a pulse of energy {energy}"
        )));
    }
    Ok(env.scaled(C64::new((target_energy / energy).sqrt(), 0.0)))
}

/// Weighted inner product `sum conj(a) b dt`.
pub fn inner(a: &Envelope, b: &Envelope) -> C64 {
    a.samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| x.conj() * y)
        .sum::<C64>()
        * a.window().dt
}

/// `||a - e^{i phi} b|| / ||a||`, with `phi` chosen to minimize the distance
/// when `phase_align` is set.
pub fn l2_distance(a: &Envelope, b: &Envelope, phase_align: bool) -> Result<f64> {
    if !a.window().same_shape(&b.window()) {
        return Err(Error::WindowMismatch(
            "l2_distance needs envelopes on the same window".into(),
        ));
    }
    let norm_a = a.energy().sqrt();
    if norm_a == 0.0 {
        return Err(Error::InvalidParameter(
            "l2_distance reference pulse has zero energy".into(),
        ));
    }
    let phase = if phase_align {
        let overlap = inner(b, a);
        if overlap.norm() > 0.0 {
            overlap / overlap.norm()
        } else {
            C64::new(1.0, 0.0)
        }
    } else {
        C64::new(1.0, 0.0)
    };
    let diff: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - phase * y).norm_sqr())
        .sum::<f64>()
        * a.window().dt;
    Ok(diff.sqrt() / norm_a)
}

/// Writes `t,re,im` rows with a one-line header. Lines in `preamble` are
/// emitted first as `#` comments.
pub fn write_csv<W: Write>(env: &Envelope, preamble: &[String], mut out: W) -> Result<()> {
    for line in preamble {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "t,re,im")?;
    for (t, s) in env.window().times().zip(env.samples()) {
        writeln!(out, "{t:.12e},{:.17e},{:.17e}", s.re, s.im)?;
    }
    Ok(())
}

/// Reads a two-column `(t, value)` or three-column `(t, re, im)` CSV. Lines
/// starting with `#` and a non-numeric header line are skipped. Times must be
/// uniformly spaced.
pub fn read_csv<R: BufRead>(input: R) -> Result<Envelope> {
    let mut times = Vec::new();
    let mut samples = Vec::new();
    let mut columns = None;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if times.is_empty() && columns.is_none() => {
                columns = Some(fields.len());
                continue;
            }
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", lineno + 1))),
        };
        if values.len() != 2 && values.len() != 3 {
            return Err(Error::Parse(format!(
                "line {}: expected 2 or 3 columns, found {}",
                lineno + 1,
                values.len()
            )));
        }
        if *columns.get_or_insert(values.len()) != values.len() {
            return Err(Error::Parse(format!(
                "line {}: inconsistent column count",
                lineno + 1
            )));
        }
        times.push(values[0]);
        samples.push(C64::new(values[1], values.get(2).copied().unwrap_or(0.0)));
    }
    if times.len() < 2 {
        return Err(Error::Parse("pulse file needs at least two samples".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Parse("pulse times must increase".into()));
    }
    for (k, t) in times.iter().enumerate() {
        if (t - (times[0] + k as f64 * dt)).abs() > 1e-6 * dt {
            return Err(Error::Parse(format!(
                "non-uniform sample spacing at row {k}"
            )));
        }
    }
    Envelope::new(TimeWindow::new(times[0], dt, times.len()), samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const T: f64 = 30.0;

    fn write_window() -> TimeWindow {
        TimeWindow::new(-T, T / 400.0, 401)
    }

    #[test]
    fn gaussian_peaks_at_center() {
        let env = build(
            &PulseSpec::gaussian(-T / 2.0, T / 10.0, 1.0),
            write_window(),
        )
        .unwrap();
        let k = write_window().nearest_index(-T / 2.0);
        assert_eq!(k, 200);
        assert!((env.samples()[k].re - 1.0).abs() < 1e-15);
        assert!(env.samples().iter().all(|s| s.norm() <= 1.0));
    }

    #[test]
    fn square_over_full_window() {
        let env = build(&PulseSpec::constant(2.5), write_window()).unwrap();
        assert!(env.samples().iter().all(|s| *s == C64::new(2.5, 0.0)));
    }

    #[test]
    fn two_step_has_one_grid_aligned_jump() {
        let w = write_window();
        let spec = PulseSpec::TwoStep {
            first: 1.0,
            second: 3.0,
            switch_time: -T / 2.0 + 0.01,
        };
        let env = build(&spec, w).unwrap();
        let jumps: Vec<usize> = (1..w.count)
            .filter(|&k| env.samples()[k] != env.samples()[k - 1])
            .collect();
        assert_eq!(jumps, vec![200]);
        let snaps = spec.snapped_edges(&w);
        assert_eq!(snaps.len(), 1);
        assert!((snaps[0].snapped + T / 2.0).abs() < 1e-12);
        assert!((snaps[0].requested - snaps[0].snapped).abs() <= w.dt / 2.0);
    }

    #[test]
    fn linear_ramp_endpoints() {
        let env = build(
            &PulseSpec::LinearRamp { from: 1.0, to: 3.0 },
            write_window(),
        )
        .unwrap();
        assert_eq!(env.samples()[0].re, 1.0);
        assert_eq!(env.samples()[400].re, 3.0);
        assert!((env.samples()[200].re - 2.0).abs() < 1e-15);
    }

    #[test]
    fn from_samples_length_mismatch() {
        let spec = PulseSpec::FromSamples {
            samples: vec![C64::new(1.0, 0.0); 3],
        };
        assert!(matches!(
            build(&spec, write_window()),
            Err(Error::WindowMismatch(_))
        ));
    }

    #[test]
    fn symmetric_pulse_is_unchanged_by_reversal() {
        let w = write_window();
        let env = build(&PulseSpec::gaussian(-T / 2.0, 3.0, 1.0), w).unwrap();
        let rev = time_reverse(&env, w).unwrap();
        for (a, b) in env.samples().iter().zip(rev.samples()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn rising_exponential_becomes_falling() {
        let w = TimeWindow::new(0.0, 0.5, 9);
        let env = Envelope::from_fn(w, |t| C64::new((0.3 * t).exp(), 0.1 * t));
        let target = TimeWindow::new(100.0, 0.5, 9);
        let rev = time_reverse(&env, target).unwrap();
        assert_eq!(rev.window(), target);
        // Index-reversal oracle.
        for k in 0..9 {
            let expected = env.samples()[8 - k].conj();
            assert_eq!(rev.samples()[k], expected);
        }
        assert!(rev.samples()[0].re > rev.samples()[8].re);
    }

    #[test]
    fn reversal_rejects_duration_mismatch() {
        let env = Envelope::zeros(TimeWindow::new(0.0, 0.5, 9));
        assert!(time_reverse(&env, TimeWindow::new(0.0, 0.5, 10)).is_err());
        assert!(time_reverse(&env, TimeWindow::new(0.0, 0.25, 9)).is_err());
    }

    #[test]
    fn normalize_cases() {
        let w = TimeWindow::new(0.0, 1.0, 4);
        let env = Envelope::from_real(w, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(env.energy(), 4.0);
        let half = normalize_energy(&env, 1.0).unwrap();
        assert!(half.samples().iter().all(|s| (s.re - 0.5).abs() < 1e-15));
        let same = normalize_energy(&env, 4.0).unwrap();
        assert_eq!(same, env);
        let zero = Envelope::zeros(w);
        assert!(matches!(
            normalize_energy(&zero, 1.0),
            Err(Error::DegenerateRetrieval(_))
        ));
        assert!(normalize_energy(&env, 0.0).is_err());
    }

    #[test]
    fn l2_distance_cases() {
        let w = TimeWindow::new(0.0, 0.5, 4);
        let a = Envelope::from_real(w, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(l2_distance(&a, &a, false).unwrap(), 0.0);
        let neg = a.scaled(C64::new(-1.0, 0.0));
        assert!(l2_distance(&a, &neg, true).unwrap() < 1e-15);
        assert!((l2_distance(&a, &neg, false).unwrap() - 2.0).abs() < 1e-15);
        let a =
            normalize_energy(&Envelope::from_real(w, &[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0).unwrap();
        let b =
            normalize_energy(&Envelope::from_real(w, &[0.0, 0.0, 1.0, 0.0]).unwrap(), 1.0).unwrap();
        assert!((l2_distance(&a, &b, true).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let other = Envelope::zeros(TimeWindow::new(0.0, 0.5, 5));
        assert!(l2_distance(&a, &other, true).is_err());
    }

    #[test]
    fn csv_two_and_three_columns() {
        let two = "t,value\n0.0,1.0\n0.5,2.0\n1.0,3.0\n";
        let env = read_csv(Cursor::new(two)).unwrap();
        assert_eq!(env.window().count, 3);
        assert_eq!(env.samples()[2], C64::new(3.0, 0.0));
        let three = "# comment\nt,re,im\n1.0,1.0,-1.0\n1.25,0.0,2.0\n";
        let env = read_csv(Cursor::new(three)).unwrap();
        assert_eq!(env.samples()[0], C64::new(1.0, -1.0));
        assert!((env.window().dt - 0.25).abs() < 1e-15);
        assert!(read_csv(Cursor::new("0,1\n1,2\n3,4\n")).is_err());
        assert!(read_csv(Cursor::new("0,1\n1,2,3\n")).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let env = Envelope::from_fn(TimeWindow::new(-3.0, 0.1, 31), |t| {
            C64::new(t.sin(), t.cos())
        });
        let mut buf = Vec::new();
        write_csv(&env, &["config_hash=abc".into()], &mut buf).unwrap();
        let back = read_csv(Cursor::new(buf)).unwrap();
        assert!(back.window().same_as(&env.window()));
        for (a, b) in env.samples().iter().zip(back.samples()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn envelope(n: usize) -> impl Strategy<Value = Envelope> {
            proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), n).prop_map(move |v| {
                let samples = v.into_iter().map(|(re, im)| C64::new(re, im)).collect();
                Envelope::new(TimeWindow::new(-1.0, 0.1, n), samples).unwrap()
            })
        }

        proptest! {
            #[test]
            fn reversal_is_an_energy_preserving_involution(env in envelope(17)) {
                let w = env.window();
                let twice = time_reverse(&time_reverse(&env, TimeWindow::new(3.0, w.dt, w.count)).unwrap(), w).unwrap();
                for (a, b) in env.samples().iter().zip(twice.samples()) {
                    prop_assert!((a - b).norm() <= 1e-15 * (1.0 + a.norm()));
                }
                let once = time_reverse(&env, w).unwrap();
                prop_assert!((once.energy() - env.energy()).abs() <= 1e-13 * env.energy().max(1e-300));
            }

            #[test]
            fn normalization_hits_target_and_is_idempotent(env in envelope(12), target in 1e-3f64..1e3) {
                prop_assume!(env.energy() > 1e-6);
                let once = normalize_energy(&env, target).unwrap();
                prop_assert!(((once.energy() - target) / target).abs() < 1e-12);
                let twice = normalize_energy(&once, target).unwrap();
                prop_assert!(l2_distance(&once, &twice, false).unwrap() < 1e-12);
                // Shape unchanged.
                prop_assert!(l2_distance(&normalize_energy(&env, 1.0).unwrap(), &normalize_energy(&once, 1.0).unwrap(), false).unwrap() < 1e-12);
            }

            #[test]
            fn l2_distance_is_a_pseudometric(a in envelope(10), b in envelope(10), c in envelope(10)) {
                prop_assume!(a.energy() > 1e-3 && b.energy() > 1e-3 && c.energy() > 1e-3);
                let (a, b, c) = (
                    normalize_energy(&a, 1.0).unwrap(),
                    normalize_energy(&b, 1.0).unwrap(),
                    normalize_energy(&c, 1.0).unwrap(),
                );
                for align in [false, true] {
                    let ab = l2_distance(&a, &b, align).unwrap();
                    let ba = l2_distance(&b, &a, align).unwrap();
                    let bc = l2_distance(&b, &c, align).unwrap();
                    let ac = l2_distance(&a, &c, align).unwrap();
                    prop_assert!((ab - ba).abs() < 1e-12);
                    prop_assert!(ac <= ab + bc + 1e-12);
                    prop_assert!(l2_distance(&a, &a, align).unwrap() < 1e-12);
                }
            }
        }
    }
}
