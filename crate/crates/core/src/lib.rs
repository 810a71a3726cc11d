//! Littlewood-Paley analysis, Besov and Chemin-Lerner norms, time-weighted
//! Besov spaces and pseudospectral solvers for transport, linearized momentum
//! and compressible Navier-Stokes equations on periodic grids.

pub mod error;
mod fft;
pub mod field;

pub use error::{Error, Result};
pub use field::{Field, Grid, Rank};
pub use partition::{DyadicPartition, NormSeries};
pub mod partition;
pub mod quadrature;
pub mod weights;
pub mod linear;
pub mod output;
pub mod paraproduct;
pub mod cns;
pub mod lab;
