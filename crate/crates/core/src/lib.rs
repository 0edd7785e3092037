//! Geometric scattering over protein-conformation graphs, a dual-attention
//! encoder trained to regress time and structure, and numerical checks of
//! the scattering stability bounds.

pub mod autodiff;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod scattering;
pub mod stability;
pub mod stats;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
