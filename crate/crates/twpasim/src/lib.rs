//! Simulation engine for SNAIL-based Josephson traveling-wave parametric
//! amplifiers (JTWPAs).
//!
//! From a single device description the crate computes four-wave-mixing gain
//! three independent ways:
//!
//! * [`analysis::cme_gain`] — closed-form two-mode coupled-mode-equation gain,
//! * [`transient`] — time-domain nodal phase method with RSJ junctions,
//! * [`hbal`] — harmonic-balance pump steady state plus linearized multi-mode
//!   scattering parameters.
//!
//! The `examples/` directory has one runnable example per capability; the
//! `twpasim` binary exposes the same functionality as subcommands.

pub mod analysis;
pub mod cli;
pub mod device;
pub mod hbal;
mod linalg;
pub mod netlist;
pub mod transient;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or physical parameter.
    #[error("domain error: {0}")]
    Domain(String),
    /// A netlist or run configuration that cannot be simulated.
    #[error("configuration error: {0}")]
    Config(String),
    /// Newton iteration failed to converge.
    #[error("convergence failure at t = {time:.4e} s: {message}")]
    Convergence { time: f64, message: String },
    /// Harmonic-balance Newton failed; carries the best residual reached.
    #[error("harmonic balance did not converge (best residual {residual:.3e}); try pump-power continuation or more iterations")]
    HbDivergence { residual: f64 },
    /// The output never crossed the arrival threshold.
    #[error("no arrival: output never exceeded the threshold")]
    NoArrival,
    /// Lookup of a frequency not present in a solved grid.
    #[error("frequency {0:.6e} Hz not in solved grid")]
    MissingFrequency(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Convert a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

/// Convert a power in watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}
