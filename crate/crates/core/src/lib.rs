pub mod certificates;
pub mod commands;
pub mod config;
pub mod domain;
pub mod error;
pub mod feasibility;
pub mod optimize;
pub mod perturbation;
pub mod report;
pub mod spectral;
pub mod verify;
mod tridiagonal;

pub use error::{Error, Result};
