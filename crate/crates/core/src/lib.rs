//! Spectral discretisation of the stochastic Keller-Segel system on the 2-torus,
//! together with the paracontrolled machinery needed to renormalise it.

pub mod enhancement;
pub mod error;
pub mod estimates;
pub mod littlewood_paley;
pub mod noise;
pub mod quadrature;
pub mod shape;
pub mod solver;
pub mod spectral;

pub use error::{KsError, Result};
pub use spectral::{FieldPath, Lattice, SpectralField, TimeGrid, VectorField};
