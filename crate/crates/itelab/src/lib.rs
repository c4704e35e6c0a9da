//! Finite element and spectral toolkit for interior transmission eigenvalue problems.

pub mod assembly;
pub mod cli;
pub mod conditions;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod halfspace;
pub mod mesh;
pub mod oracle;
pub mod solver;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
