//! Beam geometry and spin-noise diffusion correlations for multipass vapor cells.
//!
//! The crate is organised bottom-up:
//!
//! * [`optics`]: ray-transfer matrices and Gaussian beam parameters, stigmatic and general astigmatic.
//! * [`geometry`]: spot patterns and reflection counts for the recirculating cell, plus the
//!   twisted cylindrical-mirror cell.
//! * [`raytrace`]: an exact 3D Monte Carlo ray tracer used to check the paraxial geometry.
//! * [`noise`]: diffusion correlation `C_d(τ)`, full correlation, power spectral densities and a
//!   Monte Carlo diffusion oracle.
//!
//! Lengths are millimetres, times seconds and angles radians unless a name says otherwise.

pub mod error;
pub mod exec;
pub mod geometry;
pub mod noise;
pub mod optics;
pub mod quad;
pub mod raytrace;

pub use error::{Error, Result};
pub use exec::Exec;
