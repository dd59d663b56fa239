//! Convergence testing for sequences of quadratic forms on fields of
//! finite-dimensional Hilbert spaces.

pub mod error;
pub mod field;
pub mod forms;
pub mod lab;
pub mod linalg;
pub mod runner;
pub mod scenarios;
pub mod verdict;

pub use error::{Error, Result};
pub use verdict::{ConvergenceReport, DecayRule, Verdict};
