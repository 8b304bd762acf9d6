//! Simulator and verification suite for the regularised p-harmonic map heat
//! flow between discretised Riemannian manifolds: periodic structured-grid
//! domains, explicitly embedded targets, regular-ball certification, explicit
//! time integration with ε-continuation, and theorem-shaped monitors with a
//! scenario harness.

pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod harness;
pub mod rng;
pub mod target;

pub use error::{PflowError, Result};
