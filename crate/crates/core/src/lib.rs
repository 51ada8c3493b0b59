//! Parallel QND measurement tomography.
//!
//! Simulates noisy multi-qubit measurement devices, schedules the tomography
//! circuits in parallel batches, reconstructs POVMs and per-outcome Choi
//! matrices by constrained maximum likelihood and evaluates the measurement
//! quality quantifiers with bootstrap error bars.

pub mod bootstrap;
pub mod channels;
pub mod circuits;
pub mod counts;
pub mod error;
pub mod linalg;
pub mod mle;
pub mod optimize;
pub mod quantifiers;
pub mod simulator;

pub use error::{Error, Result};
