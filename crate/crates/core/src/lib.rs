//! Thermal radiative transfer with multilevel quasidiffusion, a weighted POD
//! basis of normalized intensities and a POD-Petrov-Galerkin reduced model.

pub mod anderson;
pub mod banded;
pub mod cli;
pub mod closures;
pub mod config;
pub mod error;
pub mod fom;
pub mod gauss;
pub mod loqd;
pub mod material;
pub mod metrics;
pub mod nbte;
pub mod phase_space;
pub mod pod;
pub mod problem;
pub mod rom;
pub mod store;
pub mod transport;

#[cfg(test)]
mod testing;

pub use error::{Result, TrtError};
