//! Simulation and contraction-bound verification for systems driven by
//! white, shot and Lévy noise.

pub mod bounds;
pub mod contraction;
pub mod error;
pub mod experiment;
pub mod noise;
pub mod provenance;
pub mod quad;
pub mod simulate;
pub mod systems;
pub mod verify;

pub use error::{Error, Result};
