//! Optimal and adaptive experimental designs for nonlinear regression with
//! heavy-tailed location errors.
//!
//! The crate covers fixed locally optimal designs (first-order exchange with
//! equivalence-theorem certification), the hybrid information matrix built
//! from per-support-point observed informations, and the one-step-ahead
//! adaptive strategies that use it, together with a Monte-Carlo harness
//! comparing them.

pub mod adaptive;
pub mod config;
pub mod criteria;
pub mod design;
pub mod distributions;
pub mod error;
pub mod estimation;
pub mod information;
pub mod models;
pub mod quad;
pub mod sim;

pub use distributions::{DistFamily, ErrorDist};
pub use error::{Error, Result};
pub use models::{DesignSpace, Family, ModelSpec};
