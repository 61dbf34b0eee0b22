//! Ground-truth physiology and sensor physics.
//!
//! Everything here is a pure function of explicit state, stepped on a
//! one-second virtual grid. The chain is
//! BAC -> sweat alcohol -> chamber vapor (bounded by Henry's law) -> fuel-cell current.

mod chamber;
mod fuel_cell;
mod henry;
mod jar;
mod pk;
mod session;

pub use chamber::{chamber_step, ChamberParams, ChamberState};
pub use fuel_cell::{
    baseline_drift_ppm, fuel_cell_current_na, humidity_pulse_ppm, DriftParams, FuelCell,
    FuelCellParams,
};
pub use henry::{henry_gas_ppm, HenryModel};
pub use jar::{simulate_jar, JarConfig, JarTrace};
pub use pk::{bac_profile, sweat_alcohol_mg_dl, DrinkEvent, SubjectParams, ETHANOL_DENSITY_G_PER_ML};
pub use session::{
    simulate_session, EnvSegment, EnvState, NoiseParams, SessionConfig, SessionTrace, TraceRow,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysioError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> PhysioError {
    PhysioError::InvalidInput(msg.into())
}
