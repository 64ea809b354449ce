//! Edge-cloud task offloading: queue model, rewards, a drift-plus-penalty
//! baseline and a soft actor-critic agent.

pub mod arrivals;
pub mod config;
pub mod dpp;
pub mod env;
pub mod episode;
pub mod error;
pub mod harness;
pub mod nn;
pub mod plot;
pub mod rewards;
pub mod sac;

pub use config::{AppProfile, CloudCostKind, SecondStateVar, SystemConfig};
pub use env::{Action, EdgeCloudEnv, QueueVector, StateVector, StepOutcome};
pub use error::{Error, Result};
