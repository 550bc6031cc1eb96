use std::fmt;

use serde::{Deserialize, Serialize};

use super::optim::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Warmup,
    Joint,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageKind::Warmup => "warmup",
            StageKind::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: StageKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Parameters whose name starts with one of these are updated; all others stay fixed.
    pub trainable_prefixes: Vec<String>,
    pub optimizer: OptimizerKind,
}

fn prefixes(p: &[&str]) -> Vec<String> {
    p.iter().map(|s| s.to_string()).collect()
}

impl StageConfig {
    /// Encoder-only SGD through the frozen projector and decoder.
    pub fn warmup_toy() -> Self {
        Self {
            stage: StageKind::Warmup,
            epochs: 15,
            learning_rate: 0.01,
            weight_decay: 1e-4,
            batch_size: 4,
            seed: 0,
            trainable_prefixes: prefixes(&["encoder."]),
            optimizer: OptimizerKind::sgd(),
        }
    }

    /// Every parameter under AdamW.
    pub fn joint_toy() -> Self {
        Self {
            stage: StageKind::Joint,
            epochs: 5,
            learning_rate: 1.5e-4,
            weight_decay: 0.05,
            batch_size: 4,
            seed: 1,
            trainable_prefixes: prefixes(&["encoder.", "projector.", "lm."]),
            optimizer: OptimizerKind::adamw(),
        }
    }

    pub fn warmup_paper() -> Self {
        Self {
            epochs: 150,
            ..Self::warmup_toy()
        }
    }

    pub fn joint_paper() -> Self {
        Self {
            epochs: 50,
            ..Self::joint_toy()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}
