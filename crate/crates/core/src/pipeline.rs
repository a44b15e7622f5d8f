//! End-to-end toy runs: generate, train, sample, evaluate.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::constants::{BRIDGE_TRAIN_STEPS, BRIDGE_VAR_RANGE, DEFAULT_EVAL_ROWS, DEFAULT_TRAIN_ROWS, DIFFUSION_STEPS};
use crate::data::{generate, split_pair, DatasetName, DatasetSpec};
use crate::error::Result;
use crate::lie::{make_group, GroupId, GroupParams};
use crate::metrics::{normalized_w2, W2Result};
use crate::model::{default_network_with, Activation, network_score, ode_sample, train_cfm, train_score, LossKind, ScoreNetwork, TrainConfig, TrainReport};
use crate::schedule::{make_schedule, BridgeSchedule, NoiseSchedule, ScheduleKind};
use crate::sde::{bridge_sample, prior_batch, sample, SamplerConfig, StepRule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySetup {
    pub dataset: DatasetName,
    pub group: GroupId,
    pub schedule: ScheduleKind,
    pub diffusion_steps: usize,
    pub train: TrainConfig,
    pub train_rows: usize,
    pub eval_rows: usize,
    pub activation: Activation,
    pub step_rule: StepRule,
    pub seed: u64,
}

impl ToySetup {
    /// Default hyperparameters for one dataset/group pair.
    pub fn new(dataset: DatasetName, group: GroupId, seed: u64) -> Self {
        ToySetup {
            dataset,
            group,
            schedule: ScheduleKind::Cosine,
            diffusion_steps: DIFFUSION_STEPS,
            train: TrainConfig { seed, ..Default::default() },
            train_rows: DEFAULT_TRAIN_ROWS,
            eval_rows: DEFAULT_EVAL_ROWS,
            activation: Activation::default(),
            step_rule: StepRule::default(),
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyOutcome {
    pub report: TrainReport,
    pub w2: W2Result,
    pub samples: Array2<f64>,
    pub dropped: usize,
    pub network: ScoreNetwork,
    pub schedule: NoiseSchedule,
}

/// Trains on `train_rows` fresh rows and scores `eval_rows` generated samples
/// against an independent target batch, normalized by the prior pushforward.
pub fn run_toy(setup: &ToySetup) -> Result<ToyOutcome> {
    let g = make_group(setup.group.clone(), GroupParams::default())?;
    let sched = make_schedule(setup.schedule, setup.diffusion_steps)?;
    let data = generate(&DatasetSpec::new(setup.dataset, setup.train_rows, setup.seed))?;
    let target = generate(&DatasetSpec::new(setup.dataset, setup.eval_rows, setup.seed.wrapping_add(1)))?;
    let mut net = default_network_with(&g, setup.activation, setup.seed.wrapping_add(2))?;
    let sample_seed = setup.seed.wrapping_add(3);
    let (report, samples, dropped) = match setup.train.loss_kind {
        LossKind::ScoreMatching => {
            let report = train_score(&mut net, &g, &sched, data.x.view(), &setup.train)?;
            let out = sample(&g, &sched, &network_score(&net, &sched), setup.eval_rows, &SamplerConfig { rule: setup.step_rule, ..SamplerConfig::new(sample_seed) })?;
            (report, out.batch.x, out.dropped)
        }
        LossKind::FlowMatching => {
            let report = train_cfm(&mut net, &g, &sched, data.x.view(), &setup.train)?;
            let out = ode_sample(&net, &g, setup.eval_rows, sample_seed)?;
            (report, out.batch.x, out.dropped)
        }
    };
    let prior = prior_batch(&g, setup.eval_rows, setup.seed.wrapping_add(4))?;
    let w2 = normalized_w2(samples.view(), target.x.view(), prior.view(), setup.seed)?;
    Ok(ToyOutcome { report, w2, samples, dropped, network: net, schedule: sched })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeSetup {
    pub diffusion_steps: usize,
    pub train: TrainConfig,
    pub train_rows: usize,
    pub eval_rows: usize,
    pub seed: u64,
}

impl BridgeSetup {
    pub fn new(seed: u64) -> Self {
        BridgeSetup {
            diffusion_steps: DIFFUSION_STEPS,
            train: TrainConfig { seed, steps: BRIDGE_TRAIN_STEPS, ..Default::default() },
            train_rows: DEFAULT_TRAIN_ROWS,
            eval_rows: DEFAULT_EVAL_ROWS,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BridgeOutcome {
    pub report: TrainReport,
    pub source: Array2<f64>,
    pub transported: Array2<f64>,
    /// Mean `|angle|` of transported samples relative to the canonical angle.
    pub mean_abs_angle: f64,
    /// Largest `| |x_out| − |x_in| |` over transported samples.
    pub max_radius_error: f64,
    pub dropped: usize,
    pub network: ScoreNetwork,
    pub schedule: BridgeSchedule,
}

/// Angular bridge on the plane: only the rotation generator is active, the
/// score is trained on canonical-angle rows under the zero-drift schedule,
/// and uniform-angle sources are transported with the exponential rule.
pub fn run_bridge(setup: &BridgeSetup) -> Result<BridgeOutcome> {
    let g = make_group(GroupId::So2Rotation, GroupParams::default())?;
    let sched = BridgeSchedule::geometric(setup.diffusion_steps, BRIDGE_VAR_RANGE.0, BRIDGE_VAR_RANGE.1)?;
    let (_, train_target) = split_pair(&generate(&DatasetSpec::new(DatasetName::BridgePair, setup.train_rows, setup.seed))?)?;
    let (source, _) = split_pair(&generate(&DatasetSpec::new(DatasetName::BridgePair, setup.eval_rows, setup.seed.wrapping_add(1)))?)?;
    let mut net = default_network_with(&g, Activation::default(), setup.seed.wrapping_add(2))?;
    let report = train_score(&mut net, &g, &sched, train_target.x.view(), &setup.train)?;
    let cfg = SamplerConfig { rule: StepRule::Exponential, ..SamplerConfig::new(setup.seed.wrapping_add(3)) };
    let out = bridge_sample(&g, &sched, &network_score(&net, &sched), source.x.view(), &cfg)?;
    let transported = out.batch.x;
    let (mean_abs_angle, max_radius_error) = bridge_errors(&source.x, &transported, out.dropped);
    Ok(BridgeOutcome {
        report,
        source: source.x,
        transported,
        mean_abs_angle,
        max_radius_error,
        dropped: out.dropped,
        network: net,
        schedule: sched,
    })
}

/// Mean `|atan2|` of the outputs and, when no chain was dropped (so rows
/// still pair with their sources), the largest change of radius.
pub fn bridge_errors(source: &Array2<f64>, out: &Array2<f64>, dropped: usize) -> (f64, f64) {
    let mut angle = 0.0;
    let mut radius = 0.0_f64;
    for (r, row) in out.rows().into_iter().enumerate() {
        angle += row[1].atan2(row[0]).abs();
        if dropped == 0 {
            let s = source.row(r);
            radius = radius.max((row[0].hypot(row[1]) - s[0].hypot(s[1])).abs());
        }
    }
    let radius = if dropped == 0 { radius } else { f64::INFINITY };
    (angle / out.nrows().max(1) as f64, radius)
}
