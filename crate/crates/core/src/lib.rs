//! Tiebout-Nash equilibria of continuum local-public-good economies.
//!
//! Agents distributed over a type space choose among `n` communities by
//! minimizing a cost that depends on their type, on community sizes, on
//! community characteristics and on parameters set by each community's
//! provider. An equilibrium is a fixed point of the map sending nominal
//! sizes to realized sizes, jointly with provider best responses.

pub mod costs;
pub mod equilibrium;
pub mod error;
pub mod geometry;
pub mod measure;
pub mod partition;
pub mod stability;
pub mod sweep;
pub mod welfare;

pub use error::{Error, Result};
