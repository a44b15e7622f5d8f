//! Score-based diffusion and flow matching driven by Lie group actions.
//!
//! States live in Cartesian coordinates; noise is Gaussian in the flow
//! coordinates of a group acting on the data space.

pub mod constants;
pub mod data;
pub mod error;
pub mod lie;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod sde;
pub mod verify;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use lie::{make_group, FlowCoords, GroupAction, GroupId, GroupParams};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind};
