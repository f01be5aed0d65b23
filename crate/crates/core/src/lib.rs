//! Laser cooling of a three-level cascade atom |0⟩ → |1⟩ → |2⟩ driven by two
//! counter-propagating laser pairs.
//!
//! [`species`] holds atomic data, [`bloch`] the optical Bloch equations and
//! their steady state, [`scattering`] rates and forces versus velocity,
//! [`cooling`] the cooling rate, heating rate, temperature and capture range,
//! and [`scan`] parameter sweeps and grid-search optimization.

pub mod bloch;
pub mod cooling;
pub mod error;
mod kv;
pub mod numerics;
pub mod scan;
pub mod scattering;
pub mod species;

pub use error::{Error, Result};
