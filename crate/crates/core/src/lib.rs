//! Multi-species relativistic kinetic plasma laboratory.
//!
//! Simulates compactly supported plasma data along comoving characteristics,
//! evaluates the electromagnetic field through its retarded-integral
//! decomposition, tabulates the asymptotic charge and field profiles, and
//! fits the logarithmic decay envelopes that certify the modified large-time
//! behavior of the distribution functions.

pub mod asymptotics;
pub mod error;
pub mod fields;
pub mod flow;
pub mod harness;
pub mod moments;
pub mod numeric;
pub mod relkin;

pub use error::{Error, Result};
pub use relkin::{Mat3, SpeciesParams, Vec3};
