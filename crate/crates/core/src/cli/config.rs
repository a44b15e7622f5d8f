//! Run configuration: TOML file, flag overrides, validation.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::constants::{DEFAULT_EVAL_ROWS, DEFAULT_TRAIN_ROWS, DIFFUSION_STEPS, HIDDEN_LAYERS, HIDDEN_WIDTH, TIME_EMBED_DIM};
use crate::data::{DatasetName, DatasetSpec};
use crate::error::{Error, Result};
use crate::lie::{make_group, GroupAction, GroupId, GroupParams, RadiusConvention};
use crate::model::{Activation, TrainConfig};
use crate::schedule::{make_schedule, NoiseSchedule, ScheduleKind};
use crate::sde::StepRule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupConfig {
    /// Short group name (`t2`, `so2`, `so3`, `so2rot`, `se3:5`, ...).
    pub id: String,
    pub radius_convention: RadiusConvention,
    pub reference: Option<Vec<f64>>,
}

impl Default for GroupConfig {
    fn default() -> Self {
        GroupConfig { id: "so2".into(), radius_convention: RadiusConvention::default(), reference: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { kind: ScheduleKind::Cosine, steps: DIFFUSION_STEPS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![HIDDEN_WIDTH; HIDDEN_LAYERS], time_dim: TIME_EMBED_DIM, activation: Activation::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Built-in generator; ignored when `path` is set.
    pub name: DatasetName,
    pub n: usize,
    /// CSV file to train on instead of a generated dataset.
    pub path: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { name: DatasetName::Mog2d, n: DEFAULT_TRAIN_ROWS, path: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub n: usize,
    pub rule: StepRule,
    pub deterministic_last: bool,
    /// Chains whose per-step paths are written.
    pub trajectories: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { n: DEFAULT_EVAL_ROWS, rule: StepRule::default(), deterministic_last: true, trajectories: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory; there is no wall-clock seeding.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub group: GroupConfig,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub sample: SampleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            output_dir: PathBuf::from("out"),
            group: GroupConfig::default(),
            schedule: ScheduleConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dataset: DatasetConfig::default(),
            sample: SampleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::InvalidParams("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn group_id(&self) -> Result<GroupId> {
        self.group.id.parse()
    }

    pub fn build_group(&self) -> Result<GroupAction> {
        let params = GroupParams { radius_convention: self.group.radius_convention, reference: self.group.reference.clone() };
        make_group(self.group_id()?, params)
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.schedule.kind, self.schedule.steps)
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let spec = DatasetSpec::new(self.dataset.name, self.dataset.n, self.seed()?);
        spec.validate()?;
        Ok(spec)
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        let seed = self.seed()?;
        let g = self.build_group()?;
        self.build_schedule()?;
        TrainConfig { seed, ..self.train.clone() }.validate()?;
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) || self.model.time_dim % 2 != 0 {
            return Err(Error::InvalidParams("model needs non-empty hidden widths > 0 and an even time_dim".into()));
        }
        match &self.dataset.path {
            Some(p) if !p.exists() => return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound))),
            Some(_) => {}
            None => {
                let spec = self.dataset_spec()?;
                if spec.name.dim() != g.dim_x && spec.name != DatasetName::BridgePair {
                    return Err(Error::InvalidParams(format!(
                        "dataset {} has dimension {}, group {} acts on dimension {}",
                        spec.name,
                        spec.name.dim(),
                        g.id,
                        g.dim_x
                    )));
                }
            }
        }
        if self.sample.n < 1 {
            return Err(Error::InvalidParams("sample.n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parses an enum from its serialized name (`"cosine"`, `"exponential"`, ...).
pub fn parse_named<T: DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| Error::InvalidParams(format!("'{s}': {e}")))
}

/// Flag overrides; every config key has one. `None` keeps the file value.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Group short name: t2, t3, so2, so2rot, so3, so4, son<N>, se3:<N>.
    #[arg(long)]
    pub group: Option<String>,
    /// log_radius or raw_radius.
    #[arg(long)]
    pub radius_convention: Option<String>,
    /// Comma-separated reference configuration for constrained groups.
    #[arg(long, value_delimiter = ',')]
    pub reference: Option<Vec<f64>>,
    /// cosine or linear.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Number of diffusion steps T.
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub time_dim: Option<usize>,
    /// silu or tanh.
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// score_matching or flow_matching.
    #[arg(long)]
    pub loss: Option<String>,
    /// Built-in dataset name.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Rows to generate.
    #[arg(long)]
    pub rows: Option<usize>,
    /// Training CSV instead of a generated dataset.
    #[arg(long)]
    pub data_path: Option<PathBuf>,
    /// Samples to draw.
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// euler or exponential.
    #[arg(long)]
    pub rule: Option<String>,
    #[arg(long)]
    pub deterministic_last: Option<bool>,
    #[arg(long)]
    pub trajectories: Option<usize>,
}

impl Overrides {
    /// Default < file < flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr, $dst:expr) => {
                if let Some(v) = &$flag {
                    $dst = v.clone();
                }
            };
            ($flag:expr, $dst:expr, named) => {
                if let Some(v) = &$flag {
                    $dst = parse_named(v)?;
                }
            };
        }
        if let Some(s) = self.seed {
            c.seed = Some(s);
        }
        set!(self.output_dir, c.output_dir);
        set!(self.group, c.group.id);
        set!(self.radius_convention, c.group.radius_convention, named);
        if let Some(r) = &self.reference {
            c.group.reference = Some(r.clone());
        }
        set!(self.schedule, c.schedule.kind, named);
        set!(self.diffusion_steps, c.schedule.steps);
        set!(self.hidden, c.model.hidden);
        set!(self.time_dim, c.model.time_dim);
        set!(self.activation, c.model.activation, named);
        set!(self.batch_size, c.train.batch_size);
        set!(self.train_steps, c.train.steps);
        set!(self.learning_rate, c.train.learning_rate);
        set!(self.adam_beta1, c.train.adam_betas.0);
        set!(self.adam_beta2, c.train.adam_betas.1);
        set!(self.adam_eps, c.train.adam_eps);
        set!(self.loss, c.train.loss_kind, named);
        if let Some(d) = &self.dataset {
            c.dataset.name = d.parse()?;
        }
        set!(self.rows, c.dataset.n);
        if let Some(p) = &self.data_path {
            c.dataset.path = Some(p.clone());
        }
        set!(self.n_samples, c.sample.n);
        set!(self.rule, c.sample.rule, named);
        set!(self.deterministic_last, c.sample.deterministic_last);
        set!(self.trajectories, c.sample.trajectories);
        if let Some(seed) = c.seed {
            c.train.seed = seed;
        }
        Ok(c)
    }
}
