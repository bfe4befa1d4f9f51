//! Energy-Prior Networks and related energy-based and Dirichlet-based
//! out-of-distribution detectors for low-dimensional data.

pub mod data;
pub mod dirichlet;
pub mod ebm;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod par;

pub use error::{Error, Result};
