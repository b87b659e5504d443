//! Memristor crossbar toolkit: device model, characterization, genetic
//! parameter fitting, weight mapping, netlist generation, constrained
//! training and behavioral analog inference.

pub mod characterization;
pub mod device;
pub mod engine;
pub mod error;
pub mod genetic;
pub mod mapping;
pub mod netlist;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
