//! Simulation and analysis of a dipolar-coupled pair of NV centres, each carrying
//! an intrinsic 15N nuclear spin.
//!
//! Units at every public boundary: frequencies in Hz, times in seconds, fields in
//! Gauss, distances in nm. Propagators use `U = exp(-i 2π H t)`.

pub mod config;
pub mod decoherence;
pub mod error;
pub mod fit;
pub mod hamiltonian;
pub mod io;
pub mod nuclear;
pub mod observables;
pub mod photon;
pub mod pulse;
pub mod spatial;
pub mod spin;
pub mod validation;

pub use error::{NvError, Result};
pub use num_complex::Complex64;
