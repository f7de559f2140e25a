//! Kinetic-theory laboratory: hard-disk dynamics on the unit torus, the
//! linearized Boltzmann equation and its hydrodynamic limits, backward
//! collision trees, cumulant identities and Carleman-parametrization checks.

pub mod carleman;
pub mod cumulants;
pub mod ensemble;
pub mod error;
pub mod hydro;
pub mod kinetic;
pub mod observables;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod torus;
pub mod trees;

pub use error::{Error, Result};
pub use torus::{TorusPoint, Vec2, Velocity};
