//! Versioned JSON checkpoints with base64 little-endian parameter blobs.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Activation, ScoreNetwork};
use crate::schedule::{BridgeSchedule, NoiseSchedule, ScheduleKind};

pub const FORMAT_VERSION: u32 = 1;

/// `f64` array stored as base64 of its little-endian bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct F64Blob(pub Vec<f64>);

impl Serialize for F64Blob {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = self.0.iter().flat_map(|v| v.to_le_bytes()).collect();
        s.serialize_str(&STANDARD.encode(bytes))
    }
}

impl<'de> Deserialize<'de> for F64Blob {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)?;
        if bytes.len() % 8 != 0 {
            return Err(serde::de::Error::custom("blob length is not a multiple of 8"));
        }
        Ok(F64Blob(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()))
    }
}

/// Which sampler the network drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Score,
    Flow,
    Bridge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StoredSchedule {
    Noise { kind: ScheduleKind, steps: usize, beta: F64Blob, alpha_bar: F64Blob, sigma: F64Blob },
    Bridge { steps: usize, beta: F64Blob, cumulative_variance: F64Blob },
}

impl StoredSchedule {
    pub fn from_noise(s: &NoiseSchedule) -> Self {
        StoredSchedule::Noise {
            kind: s.kind,
            steps: s.steps,
            beta: F64Blob(s.beta.clone()),
            alpha_bar: F64Blob(s.alpha_bar.clone()),
            sigma: F64Blob(s.sigma.clone()),
        }
    }

    pub fn from_bridge(s: &BridgeSchedule) -> Self {
        StoredSchedule::Bridge { steps: s.steps, beta: F64Blob(s.beta.clone()), cumulative_variance: F64Blob(s.cumulative_variance.clone()) }
    }

    fn check_len(steps: usize, arrays: &[&F64Blob]) -> Result<()> {
        if arrays.iter().any(|a| a.0.len() != steps) {
            return Err(Error::Format(format!("schedule arrays must have length {steps}")));
        }
        Ok(())
    }

    pub fn noise(&self) -> Result<NoiseSchedule> {
        match self {
            StoredSchedule::Noise { kind, steps, beta, alpha_bar, sigma } => {
                Self::check_len(*steps, &[beta, alpha_bar, sigma])?;
                Ok(NoiseSchedule { kind: *kind, steps: *steps, beta: beta.0.clone(), alpha_bar: alpha_bar.0.clone(), sigma: sigma.0.clone() })
            }
            StoredSchedule::Bridge { .. } => Err(Error::Format("checkpoint holds a bridge schedule".into())),
        }
    }

    pub fn bridge(&self) -> Result<BridgeSchedule> {
        match self {
            StoredSchedule::Bridge { steps, beta, cumulative_variance } => {
                Self::check_len(*steps, &[beta, cumulative_variance])?;
                Ok(BridgeSchedule { steps: *steps, beta: beta.0.clone(), cumulative_variance: cumulative_variance.0.clone() })
            }
            StoredSchedule::Noise { .. } => Err(Error::Format("checkpoint holds a noise schedule".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredLayer {
    /// Row-major `(fan_out, fan_in)`.
    pub weights: F64Blob,
    pub biases: F64Blob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredNetwork {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub time_dim: usize,
    pub dim_x: usize,
    pub layers: Vec<StoredLayer>,
}

impl StoredNetwork {
    pub fn from_network(net: &ScoreNetwork) -> Self {
        let layers = net
            .weights
            .iter()
            .zip(&net.biases)
            .map(|(w, b)| StoredLayer { weights: F64Blob(w.iter().copied().collect()), biases: F64Blob(b.to_vec()) })
            .collect();
        StoredNetwork { layer_sizes: net.layer_sizes.clone(), activation: net.activation, time_dim: net.time_dim, dim_x: net.dim_x, layers }
    }

    pub fn network(&self) -> Result<ScoreNetwork> {
        let sizes = &self.layer_sizes;
        if sizes.len() < 2 || self.layers.len() != sizes.len() - 1 || sizes[0] != self.dim_x + self.time_dim {
            return Err(Error::Format("network layer sizes are inconsistent".into()));
        }
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let shape = (sizes[l + 1], sizes[l]);
            let w = Array2::from_shape_vec(shape, layer.weights.0.clone())
                .map_err(|_| Error::Format(format!("layer {l} weights do not match {shape:?}")))?;
            if layer.biases.0.len() != shape.0 {
                return Err(Error::Format(format!("layer {l} biases do not have length {}", shape.0)));
            }
            weights.push(w);
            biases.push(Array1::from(layer.biases.0.clone()));
        }
        Ok(ScoreNetwork { layer_sizes: sizes.clone(), weights, biases, activation: self.activation, time_dim: self.time_dim, dim_x: self.dim_x })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    pub config: RunConfig,
    pub seed: u64,
    pub schedule: StoredSchedule,
    pub network: StoredNetwork,
    pub train_steps: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Rejects any format version other than [`FORMAT_VERSION`] before parsing the rest.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| Error::Format(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format("checkpoint has no format_version".into()))?;
        if found != FORMAT_VERSION as u64 {
            return Err(Error::VersionMismatch { found: found as u32, expected: FORMAT_VERSION });
        }
        serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
