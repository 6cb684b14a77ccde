//! Steady-state analysis of modular multilevel converter modulation schemes.
//!
//! The crate solves the reference waveform functions of direct, indirect and
//! improved-direct modulation, measures their linear-modulation margin, scans
//! PQ operating regions and sizes valve voltage and submodule capacitance. An
//! average-arm-model time-domain simulator checks the analytics.

pub mod dual;
pub mod error;
pub mod fmt;
pub mod newton;
pub mod params;
pub mod region;
pub mod simulator;
pub mod steady_state;
pub mod waveform;

pub use error::{Error, Result};
pub use params::{
    boundary_profile, derive_constants, pq_of, ConverterParams, DerivedConstants, OperatingPoint, RequiredRange, Scheme,
};
pub use steady_state::SteadyStateSolution;
