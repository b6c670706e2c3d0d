//! Spin-chain dynamics and control-field inversion for XY chains with
//! dephasing and boundary baths.

pub mod dynamics;
pub mod error;
pub mod identities;
pub mod observables;
pub mod ode;
pub mod spinops;
pub mod vlsolver;

pub use error::{Error, Result};
