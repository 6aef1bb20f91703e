//! CMA-ES as a Markov chain: the raw algorithm, its scale-free normalized
//! chains, ranked-sample densities, deterministic control paths and empirical
//! stability diagnostics.

pub mod cma;
pub mod control;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod normalized;
pub mod objectives;
pub mod rootfind;
pub mod sampling;

pub use error::{Error, Result};
