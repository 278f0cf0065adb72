//! Finite abstractions of discrete-time dynamical systems `x⁺ = f(x)`, their set-based
//! trajectory distortion, trajectory entropies, and rate-distortion lower bounds on the
//! accuracy-size tradeoff of any abstraction.

pub mod abstraction;
pub mod bounds;
pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod experiments;
pub mod exprdsl;
pub mod geometry;
pub mod mc;

pub use error::{Error, Result};
