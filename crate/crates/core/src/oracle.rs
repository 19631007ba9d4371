//! Independent check of the optimizer: the discretized linear map from input
//! samples to retrieved samples, and its largest efficiency computed
//! spectrally.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Envelope, Grid, MediumParams, TimeWindow};
use crate::optimizer::{retrieval_control, run_cycle_with, OptimizationResult};
use crate::propagation::Solver;
use crate::pulses::{inner, normalize_energy};

/// Dense eigensolves are used up to this many inputs; power iteration above.
pub const DENSE_LIMIT: usize = 1000;

/// Convergence tolerance of the power-iteration fallback.
pub const POWER_TOLERANCE: f64 = 1e-10;

/// Spectral-gap ratios above this are flagged as slowly converging.
pub const SLOW_GAP_RATIO: f64 = 0.99;

/// Linear map from write-window input samples to retrieve-window output samples.
///
/// Column `j` is the retrieved waveform for an input that is one at sample `j`
/// and zero elsewhere. Energies are `sum |x|^2 w` with `w = dt` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMap {
    pub matrix: DMatrix<C64>,
    pub in_window: TimeWindow,
    pub out_window: TimeWindow,
}

impl DiscreteMap {
    pub fn new(
        matrix: DMatrix<C64>,
        in_window: TimeWindow,
        out_window: TimeWindow,
    ) -> Result<Self> {
        if matrix.nrows() != out_window.count || matrix.ncols() != in_window.count {
            return Err(Error::WindowMismatch(format!(
                "{}x{} matrix for {} outputs and {} inputs",
                matrix.nrows(),
                matrix.ncols(),
                out_window.count,
                in_window.count
            )));
        }
        Ok(DiscreteMap {
            matrix,
            in_window,
            out_window,
        })
    }

    pub fn n_in(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn weights_in(&self) -> Vec<f64> {
        vec![self.in_window.dt; self.n_in()]
    }

    pub fn weights_out(&self) -> Vec<f64> {
        vec![self.out_window.dt; self.n_out()]
    }

    pub fn apply(&self, input: &Envelope) -> Result<Envelope> {
        if !input.window().same_shape(&self.in_window) {
            return Err(Error::WindowMismatch(
                "input does not match the map's input window".into(),
            ));
        }
        let x = DVector::from_column_slice(input.samples());
        let y = &self.matrix * x;
        Envelope::new(self.out_window, y.as_slice().to_vec())
    }

    /// `M = diag(sqrt(w_out)) A diag(1/sqrt(w_in))`, the map in coordinates
    /// where energy is the plain Euclidean norm.
    fn balanced(&self) -> DMatrix<C64> {
        let scale = (self.out_window.dt / self.in_window.dt).sqrt();
        &self.matrix * C64::new(scale, 0.0)
    }

    /// Largest column energy ratio `||A e_j||_W^2 / ||e_j||_W^2`.
    pub fn max_column_gain(&self) -> f64 {
        let m = self.balanced();
        m.column_iter()
            .map(|c| c.norm_squared())
            .fold(0.0, f64::max)
    }

    pub fn check_finite(&self) -> Result<()> {
        for c in 0..self.matrix.ncols() {
            for r in 0..self.matrix.nrows() {
                let v = self.matrix[(r, c)];
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Err(Error::NonFiniteMatrix { row: r, col: c });
                }
            }
        }
        Ok(())
    }
}

/// Builds the map column by column from unit-sample inputs.
pub fn build_map(
    params: &MediumParams,
    grid: &Grid,
    control_write: &Envelope,
    solver: Solver,
) -> Result<DiscreteMap> {
    let in_window = grid.write_window();
    let out_window = grid.retrieve_window();
    let control_retrieve = retrieval_control(grid, control_write)?;
    let n = in_window.count;
    let column = |j: usize| -> Result<Vec<C64>> {
        let mut impulse = Envelope::zeros(in_window);
        impulse.samples_mut()[j] = C64::new(1.0, 0.0);
        let cycle = run_cycle_with(
            params,
            grid,
            control_write,
            &control_retrieve,
            &impulse,
            solver,
        )?;
        Ok(cycle.output.into_samples())
    };
    #[cfg(feature = "parallel")]
    let columns: Vec<Vec<C64>> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(column).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let columns: Vec<Vec<C64>> = (0..n).map(column).collect::<Result<_>>()?;

    let flat: Vec<C64> = columns.into_iter().flatten().collect();
    let matrix = DMatrix::from_column_slice(out_window.count, n, &flat);
    DiscreteMap::new(matrix, in_window, out_window)
}

/// Spectral optimum of a map.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOptimum {
    /// `max ||A u||^2 / ||u||^2`.
    pub eta_max: f64,
    /// Second largest eigenvalue of `A^H A` in energy units.
    pub eta_second: f64,
    /// Maximizer, normalized to unit energy.
    pub optimal_input: Envelope,
    pub method: EigenMethod,
}

impl SpectralOptimum {
    /// `sigma_2 / sigma_1` of the map.
    pub fn gap_ratio(&self) -> f64 {
        if self.eta_max > 0.0 {
            (self.eta_second.max(0.0) / self.eta_max).sqrt()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    Dense,
    PowerIteration,
}

/// Largest efficiency of the map and its maximizing input. Dense Hermitian
/// eigensolve up to [`DENSE_LIMIT`] inputs, power iteration beyond.
pub fn optimal_efficiency(map: &DiscreteMap) -> Result<SpectralOptimum> {
    if map.n_in() <= DENSE_LIMIT {
        optimal_efficiency_dense(map)
    } else {
        optimal_efficiency_power(map, POWER_TOLERANCE, 100_000)
    }
}

pub fn optimal_efficiency_dense(map: &DiscreteMap) -> Result<SpectralOptimum> {
    map.check_finite()?;
    let m = map.balanced();
    let gram = m.adjoint() * &m;
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = order[0];
    let eta_second = order.get(1).map_or(0.0, |&k| eig.eigenvalues[k]);
    let v = eig.eigenvectors.column(top);
    Ok(SpectralOptimum {
        eta_max: eig.eigenvalues[top].max(0.0),
        eta_second,
        optimal_input: unbalance(map, v.iter().copied().collect())?,
        method: EigenMethod::Dense,
    })
}

/// Power iteration on `M^H M`, stopping when the Rayleigh quotient changes by
/// less than `tol` (relative). A deflated second run estimates the next
/// eigenvalue.
pub fn optimal_efficiency_power(
    map: &DiscreteMap,
    tol: f64,
    max_iters: usize,
) -> Result<SpectralOptimum> {
    map.check_finite()?;
    let m = map.balanced();
    let n = map.n_in();
    let start = DVector::from_fn(n, |i, _| {
        C64::new(1.0 + (i as f64 * 0.618).sin(), (i as f64 * 0.37).cos())
    });
    let (eta_max, v1) = power(&m, start.clone(), None, tol, max_iters);
    let (eta_second, _) = if n > 1 {
        power(&m, start, Some(&v1), tol, max_iters)
    } else {
        (0.0, v1.clone())
    };
    Ok(SpectralOptimum {
        eta_max,
        eta_second,
        optimal_input: unbalance(map, v1.iter().copied().collect())?,
        method: EigenMethod::PowerIteration,
    })
}

fn power(
    m: &DMatrix<C64>,
    mut v: DVector<C64>,
    deflate: Option<&DVector<C64>>,
    tol: f64,
    max_iters: usize,
) -> (f64, DVector<C64>) {
    let project = |v: &mut DVector<C64>| {
        if let Some(u) = deflate {
            let c = u.dotc(v);
            *v -= u * c;
        }
    };
    project(&mut v);
    let norm = v.norm();
    if norm == 0.0 {
        return (0.0, v);
    }
    v /= C64::new(norm, 0.0);
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let mut w = m.adjoint() * (m * &v);
        project(&mut w);
        let next = v.dotc(&w).re;
        let norm = w.norm();
        if norm == 0.0 {
            return (0.0, v);
        }
        v = w / C64::new(norm, 0.0);
        if (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return (next, v);
        }
        lambda = next;
    }
    (lambda, v)
}

fn unbalance(map: &DiscreteMap, v: Vec<C64>) -> Result<Envelope> {
    let env = Envelope::new(map.in_window, v)?;
    if env.energy() > 0.0 {
        normalize_energy(&env, 1.0)
    } else {
        Ok(env)
    }
}

/// Comparison of an optimizer run with the spectral optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub eta_iterative: f64,
    pub eta_spectral: f64,
    pub abs_difference: f64,
    pub rel_difference: f64,
    /// `|<u_iter, u_spec>| / (|u_iter| |u_spec|)`.
    pub mode_overlap: f64,
    /// `sigma_2 / sigma_1`.
    pub gap_ratio: f64,
    /// Predicted per-iteration contraction of the efficiency error, `(sigma_2/sigma_1)^2`.
    pub predicted_contraction: f64,
    /// Observed ratios `(eta_N - eta_{k+1}) / (eta_N - eta_k)` with `eta_N` the
    /// final iterate.
    pub observed_contractions: Vec<f64>,
    pub slow_convergence: bool,
    pub iterations: usize,
}

/// Efficiency errors below this fraction of the converged value are too close
/// to the stopping tolerance to give a meaningful contraction ratio.
const CONTRACTION_FLOOR: f64 = 1e-5;

pub fn crosscheck(opt: &OptimizationResult, map: &DiscreteMap) -> Result<CrosscheckReport> {
    let spectral = optimal_efficiency(map)?;
    crosscheck_with(opt, &spectral)
}

pub fn crosscheck_with(
    opt: &OptimizationResult,
    spectral: &SpectralOptimum,
) -> Result<CrosscheckReport> {
    let u = &opt.fixed_point_input;
    if !u.window().same_shape(&spectral.optimal_input.window()) {
        return Err(Error::ConfigMismatch(
            "optimizer and map were built on different write windows".into(),
        ));
    }
    let eta_iterative = opt.final_efficiency();
    let eta_spectral = spectral.eta_max;
    let v = &spectral.optimal_input;
    let overlap = inner(u, v).norm() / (u.energy().sqrt() * v.energy().sqrt());
    let gap_ratio = spectral.gap_ratio();
    // Measured against the iteration's own limit so that the small offset
    // between the two discretizations does not masquerade as slow decay.
    let floor = CONTRACTION_FLOOR * eta_iterative.abs().max(f64::MIN_POSITIVE);
    let errors: Vec<f64> = opt
        .records
        .iter()
        .map(|r| eta_iterative - r.efficiency)
        .collect();
    let observed_contractions = errors
        .windows(2)
        .filter(|w| w[0] > floor)
        .map(|w| w[1] / w[0])
        .collect();
    let abs_difference = (eta_iterative - eta_spectral).abs();
    Ok(CrosscheckReport {
        eta_iterative,
        eta_spectral,
        abs_difference,
        rel_difference: if eta_spectral > 0.0 {
            abs_difference / eta_spectral
        } else {
            abs_difference
        },
        mode_overlap: overlap,
        gap_ratio,
        predicted_contraction: gap_ratio * gap_ratio,
        observed_contractions,
        slow_convergence: gap_ratio > SLOW_GAP_RATIO,
        iterations: opt.records.len(),
    })
}

/// JSON header accompanying a binary map export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapHeader {
    pub rows: usize,
    pub cols: usize,
    pub dt: f64,
    pub in_start: f64,
    pub out_start: f64,
    pub config_hash: String,
    /// Always `"column_major_f64le_re_im"`.
    pub layout: String,
}

pub const MAP_LAYOUT: &str = "column_major_f64le_re_im";

/// Writes the matrix as little-endian `(re, im)` f64 pairs in column-major
/// order and returns the header describing it.
pub fn write_map<W: Write>(map: &DiscreteMap, config_hash: &str, mut out: W) -> Result<MapHeader> {
    for v in map.matrix.iter() {
        out.write_all(&v.re.to_le_bytes())?;
        out.write_all(&v.im.to_le_bytes())?;
    }
    out.flush()?;
    Ok(MapHeader {
        rows: map.n_out(),
        cols: map.n_in(),
        dt: map.in_window.dt,
        in_start: map.in_window.start,
        out_start: map.out_window.start,
        config_hash: config_hash.to_string(),
        layout: MAP_LAYOUT.to_string(),
    })
}

pub fn read_map<R: Read>(header: &MapHeader, mut input: R) -> Result<DiscreteMap> {
    if header.layout != MAP_LAYOUT {
        return Err(Error::Parse(format!(
            "unsupported map layout '{}'",
            header.layout
        )));
    }
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let expected = header.rows * header.cols * 16;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "map payload has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let values: Vec<C64> = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            C64::new(re, im)
        })
        .collect();
    DiscreteMap::new(
        DMatrix::from_column_slice(header.rows, header.cols, &values),
        TimeWindow::new(header.in_start, header.dt, header.cols),
        TimeWindow::new(header.out_start, header.dt, header.rows),
    )
}
