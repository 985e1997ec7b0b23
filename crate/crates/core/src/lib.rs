//! Backward Euler finite element solver for linear parabolic problems on
//! changing meshes, with a posteriori error estimators built on the elliptic
//! reconstruction and a convergence/effectivity benchmark harness.

pub mod assembly;
pub mod benchmark;
pub mod checks;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod evolution;
pub mod fespace;
pub mod mesh;
pub mod quadrature;

pub use error::{Error, Result};
