//! Quantum propagators assembled from classical action fields and transported
//! densities, with a finite-difference audit and a Crank-Nicolson reference.

pub mod clock;
pub mod convergence;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod model;
pub mod oracle;
pub mod propagator;
pub mod runner;
pub mod superposition;

pub use error::{Error, Result};
