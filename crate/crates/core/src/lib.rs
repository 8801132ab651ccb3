//! Finite truncations of non-symmetric, possibly degenerate Ornstein-Uhlenbeck
//! operators on Gaussian spaces.

pub mod basis;
pub mod covariance;
pub mod error;
pub mod example7;
pub mod galerkin;
pub mod linalg;
pub mod mehler;
pub mod model;
pub mod profile;
pub mod quadrature;
pub mod sobolev;
pub mod verify;

pub use error::{LabError, Result};
