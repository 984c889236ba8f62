//! Numerical laboratory for invariant distributions of partially hyperbolic
//! Anosov diffeomorphisms of `T^3`.

pub mod dynamics;
pub mod error;
pub mod exponents;
pub mod fractal;
pub mod holonomy;
pub mod lab;
pub mod numeric;
pub mod splitting;
pub mod torus;

pub use error::{LabError, Result};
