//! Simulation and estimation toolkit for a programmable two-source Bell-state
//! generator built from SPDC pair sources and thermo-optic interferometers.
//!
//! The crate is layered bottom-up:
//!
//! - [`quantum`]: two-qubit kets, density matrices and entanglement metrics.
//! - [`circuit`]: deterministic chip physics (pump splitting, post-selected
//!   state, analysis projectors, heater calibration).
//! - [`sim`]: Poissonian coincidence acquisition, N00N fringes, CAR model.
//! - [`tomography`]: constrained maximum-likelihood reconstruction with
//!   detector-pair normalisation and Monte Carlo error bars.
//!
//! Basis ordering is fixed everywhere: amplitude index `2·A + B`, where qubit A
//! lives on rails `a`/`b` and qubit B on rails `c`/`d`, and the first rail of
//! each pair carries logical `0`.

pub mod circuit;
pub mod error;
pub mod optim;
pub mod quantum;
pub mod rng;
pub mod sim;
pub mod tomography;

pub use error::{Error, Result};
