//! Persisted run configuration shared by the command-line tools.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::MfccConfig;
use crate::harness::{ExperimentConfig, SynthConfig};
use crate::networks::{NetworkConfig, PretrainConfig};
use crate::par::Execution;
use crate::scorer::ThresholdMode;
use crate::trainer::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// When set, replaces every nested seed.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub mfcc: MfccConfig,
    pub networks: NetworkConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub histogram_bins: usize,
    pub execution: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        let experiment = ExperimentConfig::default();
        Self {
            version: CONFIG_VERSION,
            seed: None,
            synth: SynthConfig::default(),
            mfcc: experiment.mfcc,
            networks: experiment.networks,
            pretrain: experiment.pretrain,
            train: experiment.train,
            histogram_bins: experiment.histogram_bins,
            execution: experiment.execution,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("version {} is not supported (expected {CONFIG_VERSION})", self.version)));
        }
        self.synth.validate()?;
        self.experiment().validate()
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn set_threshold_mode(&mut self, mode: ThresholdMode) {
        self.train.threshold_mode = mode;
    }

    pub fn synth(&self) -> SynthConfig {
        let mut s = self.synth.clone();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let mut train = self.train.clone();
        let mut seed = ExperimentConfig::default().seed;
        if let Some(s) = self.seed {
            train.seed = s;
            seed = s;
        }
        ExperimentConfig {
            networks: self.networks.clone(),
            pretrain: self.pretrain.clone(),
            train,
            mfcc: self.mfcc.clone(),
            histogram_bins: self.histogram_bins,
            seed,
            execution: self.execution,
        }
    }
}
