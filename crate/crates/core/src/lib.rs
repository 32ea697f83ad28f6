//! Optimal transport on the manifold of couplings with Riemannian solvers.

pub mod baselines;
pub mod dataops;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod manifold;
pub mod par;
pub mod problems;
pub mod solvers;

pub use error::{Error, Result};
