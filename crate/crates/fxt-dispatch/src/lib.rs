//! Distributed fixed-time economic dispatch.
//!
//! Generators agree on a common incremental cost through a nonlinear
//! consensus protocol whose settling time is bounded independently of the
//! initial state, while per-unit power updates keep the total generation
//! matched to the total demand at every instant. The crate provides:
//!
//! - [`graph`]: communication topologies, Laplacian spectra, switching
//!   schedules;
//! - [`model`]: generator cost curves, loads, case-file ingestion;
//! - [`oracle`]: closed-form and brute-force reference solutions;
//! - [`dynamics`]: the continuous-time protocol, its settling-time and
//!   gain bounds, and a deterministic fixed-step integrator;
//! - [`constrained`]: the capacity-constrained dispatch loop built on
//!   distributed averaging of correction terms;
//! - [`discrete`]: the consistent discrete-time scheme with finite-step
//!   average consensus;
//! - [`scenario`]: canned case studies and a seeded random-scenario
//!   generator;
//! - [`cli`]: the command-line driver.

pub mod cli;
pub mod constrained;
pub mod discrete;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod scenario;
pub mod trace;

pub use error::{Error, Result};
