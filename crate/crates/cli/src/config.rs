use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vidcap::metrics::EvalSettings;
use vidcap::model::ModelConfig;
use vidcap::train::{StageConfig, StageKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Toy,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSettings {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSettings {
    pub budget: usize,
    pub seed: u64,
    /// Epochs of the short training run behind each objective evaluation.
    pub proxy_epochs: usize,
    pub stage: StageKind,
}

/// Every setting of a run. Written beside each command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    /// Seed of the model initialization.
    pub seed: u64,
    pub model: ModelConfig,
    pub warmup: StageConfig,
    pub joint: StageConfig,
    pub dataset: DatasetSettings,
    pub eval: EvalSettings,
    pub tune: TuneSettings,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (model, warmup, joint) = match preset {
            Preset::Toy => (ModelConfig::toy(), StageConfig::warmup_toy(), StageConfig::joint_toy()),
            Preset::Paper => (ModelConfig::paper(), StageConfig::warmup_paper(), StageConfig::joint_paper()),
        };
        Self {
            preset,
            seed: 0,
            eval: EvalSettings {
                test_clips: model.sampler.test_clips,
                ..EvalSettings::default()
            },
            model,
            warmup,
            joint,
            dataset: DatasetSettings {
                n_train: 8,
                n_test: 4,
                seed: 7,
            },
            tune: TuneSettings {
                budget: 25,
                seed: 1,
                proxy_epochs: 2,
                stage: StageKind::Joint,
            },
        }
    }

    /// Preset defaults with the JSON file at `path` merged over them.
    pub fn load(preset: Preset, path: Option<&Path>) -> Result<Self> {
        let mut base = serde_json::to_value(Self::preset(preset))?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let overlay: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            if !overlay.is_object() {
                bail!("config {} must hold a JSON object", path.display());
            }
            merge(&mut base, overlay);
        }
        let cfg: Self = serde_json::from_value(base).context("config does not match the run schema")?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn stage(&self, kind: StageKind) -> &StageConfig {
        match kind {
            StageKind::Warmup => &self.warmup,
            StageKind::Joint => &self.joint,
        }
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
