//! Reservoir simulation toolkit.
//!
//! * [`hydro`]: stage-storage curve, reward components, simulator parameters.
//! * [`inflow`]: GLS and dynamic-linear-model inflow forecasters, NSE.
//! * [`data`]: daily CSV datasets, year splits and a synthetic generator.
//! * [`env`]: the daily dam MDP with reset/step and episode rollouts.
//! * [`policy`]: the ten-daily baseline schedule and diagnostic policies.

pub mod data;
pub mod env;
pub mod exec;
pub mod hydro;
pub mod inflow;
pub mod policy;
pub mod seed;

pub use exec::Execution;
pub use hydro::{Discharge, SimParams, StageStorageCurve, StorageVolume, WaterLevel};
