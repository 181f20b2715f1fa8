//! Numerical core for incompressible flow in stochastically periodic fissured media.

pub mod dynsys;
pub mod error;
pub mod seed;
pub mod spectral;
pub mod geometry;
pub mod testfn;
pub mod twoscale;
pub mod linalg;
pub mod tensor;
pub mod mac;
pub mod epsolver;
pub mod cell;
pub mod limitsolver;
pub mod scenario;

pub use error::{Error, Result};
