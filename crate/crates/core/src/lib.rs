//! Separability decision for bipartite Gaussian states.
//!
//! Given the correlation matrix of a bipartite Gaussian state, iterate a
//! nonlinear matrix map until one of two positivity tests settles the
//! question: the state is entangled, or it is separable and an explicit
//! decomposition `gamma >= gamma_A ⊕ gamma_B` can be reconstructed.

pub mod certify;
pub mod cli;
pub mod engine;
pub mod error;
pub mod gaussian;
pub mod matlin;
pub mod ppt;

pub use error::{Error, Result};
