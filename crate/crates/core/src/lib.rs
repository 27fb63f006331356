//! Gibbs measures, Fourier transforms and transfer-operator diagnostics for
//! uniformly expanding maps on Cantor sets.

pub mod cheb;
pub mod deviations;
pub mod dolgopyat;
pub mod error;
pub mod fourier;
pub mod ifs;
pub mod oscillation;
pub mod sum;
pub mod symbolic;
pub mod thermo;

pub use error::{Error, Result};
pub use ifs::{CantorSystem, Interval};
pub use symbolic::{Block, Word};
