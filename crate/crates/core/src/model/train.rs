//! Denoising score-matching trainer.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::constants::{ADAM_BETAS, ADAM_EPS, BATCH_SIZE, LEARNING_RATE, TRAIN_STEPS};
use crate::error::{Error, Result};
use crate::lie::GroupAction;
use crate::model::net::{mse, Adam, ScoreNetwork};
use crate::rng::{normal_vec, seeded};
use crate::schedule::Schedule;
use crate::sde::place_at;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    ScoreMatching,
    FlowMatching,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    pub loss_kind: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: BATCH_SIZE,
            steps: TRAIN_STEPS,
            learning_rate: LEARNING_RATE,
            adam_betas: ADAM_BETAS,
            adam_eps: ADAM_EPS,
            seed: 0,
            loss_kind: LossKind::ScoreMatching,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.steps < 1 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParams("training needs batch_size >= 1, steps >= 1 and learning_rate > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss at every step.
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub wall_time_s: f64,
    pub seed: u64,
}

impl TrainReport {
    /// Mean of the first `window` losses.
    pub fn head_mean(&self, window: usize) -> f64 {
        let w = window.min(self.losses.len()).max(1);
        self.losses[..w].iter().sum::<f64>() / w as f64
    }

    /// Mean of the last `window` losses.
    pub fn tail_mean(&self, window: usize) -> f64 {
        let w = window.min(self.losses.len()).max(1);
        self.losses[self.losses.len() - w..].iter().sum::<f64>() / w as f64
    }
}

/// Flow coordinates of every dataset row, checked once up front.
pub(crate) fn dataset_coords(g: &GroupAction, data: ArrayView2<f64>) -> Result<Vec<Vec<f64>>> {
    if data.nrows() == 0 {
        return Err(Error::InvalidParams("empty training set".into()));
    }
    if data.ncols() != g.dim_x {
        return Err(Error::SizeMismatch(format!("dataset has {} columns, group acts on {}", data.ncols(), g.dim_x)));
    }
    (0..data.nrows())
        .map(|i| {
            g.to_flow_coords(&data.row(i).to_vec())
                .map(|c| c.values)
                .map_err(|e| Error::SingularPoint(format!("training row {i}: {e}")))
        })
        .collect()
}

/// Network time input for step index `k` of a `steps`-step schedule.
pub fn step_time(k: usize, steps: usize) -> f64 {
    (k + 1) as f64 / steps as f64
}

pub(crate) fn check_network(net: &ScoreNetwork, g: &GroupAction) -> Result<()> {
    if net.dim_x != g.dim_x || net.dim_out() != g.dim_g {
        return Err(Error::SizeMismatch(format!(
            "network maps {} -> {}, group needs {} -> {}",
            net.dim_x,
            net.dim_out(),
            g.dim_x,
            g.dim_g
        )));
    }
    Ok(())
}

/// Denoising score matching in flow coordinates.
///
/// The network predicts `N(x_t, t) ≈ −η`, so the score is `N/σ_t`; the loss
/// `mean ‖N + η‖²` is the score loss `‖s + η/σ_t‖²` weighted by `σ_t²`.
pub fn train_score(
    net: &mut ScoreNetwork,
    g: &GroupAction,
    sched: &dyn Schedule,
    data: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_network(net, g)?;
    let coords = dataset_coords(g, data)?;
    let start = Instant::now();
    let mut rng = seeded(cfg.seed);
    let mut opt = Adam::new(net.n_params(), cfg.learning_rate, cfg.adam_betas, cfg.adam_eps);
    let mut losses = Vec::with_capacity(cfg.steps);
    let (b, dx, dg) = (cfg.batch_size, g.dim_x, g.dim_g);
    let steps = sched.steps();
    for step in 0..cfg.steps {
        let mut x = Array2::zeros((b, dx));
        let mut target = Array2::zeros((b, dg));
        let mut times = Vec::with_capacity(b);
        for r in 0..b {
            let i = rng.random_range(0..coords.len());
            let k = rng.random_range(0..steps);
            let eta = normal_vec(&mut rng, dg);
            let (a, s) = (sched.mean_coeff(k), sched.sigma(k));
            let tau_t: Vec<f64> = coords[i].iter().zip(&eta).map(|(t0, e)| a * t0 + s * e).collect();
            let x_t = place_at(g, &data.row(i).to_vec(), &coords[i], &tau_t)?;
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&x_t[..]));
            for c in 0..dg {
                target[[r, c]] = -eta[c];
            }
            times.push(step_time(k, steps));
        }
        let (out, cache) = net.forward_cached(x.view(), &times);
        let (loss, d_out) = mse(&out, &target);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(step));
        }
        let grads = net.backward(&cache, &d_out);
        opt.update(net, &grads);
        if !net.all_finite() {
            return Err(Error::NonFiniteLoss(step));
        }
        losses.push(loss);
    }
    Ok(TrainReport { final_loss: *losses.last().expect("steps >= 1"), losses, wall_time_s: start.elapsed().as_secs_f64(), seed: cfg.seed })
}

/// Batched flow-coordinate score `N(x, t)/σ_t` of a trained network.
pub fn network_score<'a>(net: &'a ScoreNetwork, sched: &'a dyn Schedule) -> impl Fn(ArrayView2<f64>, usize) -> Array2<f64> + Sync + 'a {
    move |x: ArrayView2<f64>, k: usize| {
        let times = vec![step_time(k, sched.steps()); x.nrows()];
        net.forward(x, &times) / sched.sigma(k)
    }
}

