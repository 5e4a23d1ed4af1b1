//! Stochastic compliance topology optimization over finitely many load
//! scenarios.
//!
//! The crate is organised bottom-up:
//!
//! * [`fem`] - structured plane-stress Q4 mesh, assembly and banded Cholesky
//!   solves with an audited solve counter.
//! * [`simp`] - density filter, power penalty, interpolation and Heaviside
//!   projection, forward and reverse.
//! * [`probing`] - Rademacher and Sylvester-Hadamard probing vectors.
//! * [`estimators`] - exact, trace and diagonal evaluation of the load
//!   compliances `diag(F^T K^-1 F)` and their design gradients.
//! * [`stats`] - mean / standard deviation objectives and their partials.
//! * [`mma`] - method of moving asymptotes and the continuation driver.
//! * [`scenarios`] - sampling and file exchange of load scenario sets.
//! * [`runner`] - experiment front end used by the `stopt` binary.

pub mod error;
pub mod estimators;
pub mod fem;
pub mod mma;
pub mod probing;
pub mod runner;
pub mod scenarios;
pub mod simp;
pub mod stats;

pub use error::{Error, Result};
