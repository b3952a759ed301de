//! Random walks among random conductances, lifted to level-2 rough paths.
//!
//! The crate is organized along the experiment pipeline:
//!
//! * [`env`] generates periodic conductance environments and their clusters;
//! * [`walk`] simulates the variable-speed walk exactly;
//! * [`corrector`] solves the periodic cell problem for the corrector and the
//!   homogenized matrices Σ², Γ;
//! * [`roughpath`] builds Itô and Stratonovich lifts, left-point integrals and
//!   quadratic covariations on jump skeletons;
//! * [`pvar`] computes exact and bounded p-variation norms;
//! * [`diagnostics`] runs Monte Carlo ensembles and evaluates verdicts;
//! * [`cli`] wires everything into reproducible commands.

pub mod cli;
pub mod corrector;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod linalg;
pub mod pvar;
pub mod rng;
pub mod roughpath;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
