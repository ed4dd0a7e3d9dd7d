//! Run configuration read from TOML. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::corpus::GenConfig;
use crate::pointer::PointerConfig;
use crate::retrieval::RetrievalConfig;
use crate::train::TrainConfig;

pub const DEFAULT_SEED: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubwordConfig {
    pub num_merges: usize,
}

impl Default for SubwordConfig {
    fn default() -> Self {
        Self { num_merges: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Threshold used by `rewrite` when none is given.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: GenConfig,
    pub subword: SubwordConfig,
    pub retrieval: RetrievalConfig,
    pub retrieval_train: TrainConfig,
    pub pointer: PointerConfig,
    pub pointer_train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            data: GenConfig::default(),
            subword: SubwordConfig::default(),
            retrieval: RetrievalConfig::default(),
            retrieval_train: TrainConfig {
                epochs: 10,
                batch_size: 512,
                lr: 1e-3,
            },
            pointer: PointerConfig::default(),
            pointer_train: TrainConfig {
                epochs: 10,
                batch_size: 256,
                lr: 1e-3,
            },
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.data.validate().map_err(|e| e.to_string())?;
        self.retrieval.validate()?;
        self.retrieval_train.validate()?;
        self.pointer.validate()?;
        self.pointer_train.validate()?;
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(format!("eval.threshold = {} is outside [0, 1]", self.eval.threshold));
        }
        Ok(())
    }
}
