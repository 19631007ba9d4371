//! Simulation of light storage and retrieval in optically dense Lambda-type
//! ensembles, and the time-reversal iteration that finds the input pulse shape
//! with the highest write/store/retrieve efficiency.
//!
//! * [`model`]: dimensionless parameters, grids, envelopes, EIT figures of merit.
//! * [`pulses`]: control and signal pulse construction and comparison.
//! * [`propagation`]: write/store/retrieve stages (full and adiabatic models).
//! * [`optimizer`]: the iterative time-reversal optimization.
//! * [`oracle`]: the discretized linear storage map and its spectral optimum.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod model;
pub mod optimizer;
pub mod oracle;
pub mod propagation;
pub mod pulses;

pub use error::{Error, Result};
pub use model::{Envelope, FieldState, Grid, MediumParams, TimeWindow};
pub use propagation::Solver;
