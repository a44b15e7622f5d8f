//! Score and flow-matching networks, their trainers and the ODE sampler.

pub mod flow;
pub mod net;
pub mod train;

pub use flow::{cfm_coefficients, cfm_target, integrate_conditional, ode_integrate, ode_sample, train_cfm};
pub use net::{Activation, Adam, ScoreNetwork};
pub use train::{network_score, train_score, LossKind, TrainConfig, TrainReport};

use crate::constants::{HIDDEN_LAYERS, HIDDEN_WIDTH, TIME_EMBED_DIM};
use crate::error::Result;
use crate::lie::GroupAction;
use crate::rng::seeded;

/// Default architecture for a group: `[dim_x + 32, 128, 128, 128, dim_g]`.
pub fn default_network(g: &GroupAction, seed: u64) -> Result<ScoreNetwork> {
    default_network_with(g, Activation::default(), seed)
}

/// Default architecture with a chosen activation.
pub fn default_network_with(g: &GroupAction, act: Activation, seed: u64) -> Result<ScoreNetwork> {
    ScoreNetwork::new(g.dim_x, g.dim_g, &[HIDDEN_WIDTH; HIDDEN_LAYERS], TIME_EMBED_DIM, act, &mut seeded(seed))
}

#[cfg(test)]
mod tests;
