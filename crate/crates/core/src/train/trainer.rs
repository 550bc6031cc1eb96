use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::OptimizerState;
use super::stage::{StageConfig, StageKind};
use crate::data::{sample_clip, VideoRecord};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{batch_loss, training_items, ModelBundle};
use crate::scalar::Scalar;
use crate::vision::{NormMode, BN_MOMENTUM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: StageKind,
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Everything besides the parameters that determines the rest of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState<T> {
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub global_step: usize,
    /// Video order of the current epoch; empty between epochs.
    pub order: Vec<usize>,
    pub rng: ChaCha8Rng,
    pub optimizer: OptimizerState<T>,
}

pub struct Trainer<T> {
    pub bundle: ModelBundle<T>,
    pub stage: StageConfig,
    pub state: TrainerState<T>,
    pub history: Vec<LossRecord>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(mut bundle: ModelBundle<T>, stage: StageConfig) -> Result<Self> {
        if stage.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        bundle.store.set_trainable(&stage.trainable_prefixes);
        let state = TrainerState {
            epoch: 0,
            step_in_epoch: 0,
            global_step: 0,
            order: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(stage.seed),
            optimizer: OptimizerState::new(stage.optimizer),
        };
        Ok(Self {
            bundle,
            stage,
            state,
            history: Vec::new(),
        })
    }

    /// Continues a run from saved state.
    pub fn resume(mut bundle: ModelBundle<T>, stage: StageConfig, state: TrainerState<T>, history: Vec<LossRecord>) -> Self {
        bundle.store.set_trainable(&stage.trainable_prefixes);
        Self {
            bundle,
            stage,
            state,
            history,
        }
    }

    pub fn steps_per_epoch(&self, videos: usize) -> usize {
        (videos * self.bundle.config.sampler.train_clips).div_ceil(self.stage.batch_size)
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.stage.epochs
    }

    /// The frozen encoder runs on its running statistics.
    fn norm_mode(&self) -> NormMode {
        let trains_encoder = self
            .bundle
            .store
            .params()
            .iter()
            .any(|p| p.name.starts_with("encoder.") && p.tensor.requires_grad());
        if trains_encoder {
            NormMode::Train
        } else {
            NormMode::Eval
        }
    }

    /// One optimizer update on the next batch. Returns the batch loss.
    pub fn step(&mut self, data: &[&VideoRecord]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("training data is empty"));
        }
        let clips_per_video = self.bundle.config.sampler.train_clips.max(1);
        let st = &mut self.state;
        if st.order.is_empty() {
            st.order = (0..data.len()).flat_map(|i| std::iter::repeat_n(i, clips_per_video)).collect();
            st.order.shuffle(&mut st.rng);
        }
        let bs = self.stage.batch_size;
        let start = st.step_in_epoch * bs;
        let batch: Vec<usize> = st.order[start..(start + bs).min(st.order.len())].to_vec();
        let mut clips = Vec::with_capacity(batch.len());
        let mut items = Vec::with_capacity(batch.len());
        for &i in &batch {
            clips.push(sample_clip(data[i], &self.bundle.config.sampler, &mut st.rng)?);
            items.push(training_items(data[i]));
        }

        let mode = self.norm_mode();
        let mut g = Graph::new(&self.bundle.store);
        let out = batch_loss(&mut g, &self.bundle.config, &self.bundle.vocab, &clips, &items, mode)?;
        let mut tape = g.into_tape();
        let loss = tape.values(out.loss)[0].as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss,
                epoch: self.state.epoch,
                step: self.state.step_in_epoch,
                lr: self.stage.learning_rate,
            });
        }
        tape.backward(out.loss)?;
        let store = &mut self.bundle.store;
        tape.flush_param_grads(store);
        drop(tape);
        self.state
            .optimizer
            .step(store, self.stage.learning_rate, self.stage.weight_decay)?;
        store.reset_grads();
        let momentum = T::from_f64_lossy(BN_MOMENTUM);
        for (prefix, stats) in &out.stats {
            let mut rm = store.buffer(&format!("{prefix}.running_mean"))?.values().to_vec();
            let mut rv = store.buffer(&format!("{prefix}.running_var"))?.values().to_vec();
            stats.update_running(momentum, &mut rm, &mut rv);
            store.buffer_mut(&format!("{prefix}.running_mean"))?.values_mut().copy_from_slice(&rm);
            store.buffer_mut(&format!("{prefix}.running_var"))?.values_mut().copy_from_slice(&rv);
        }

        let st = &mut self.state;
        self.history.push(LossRecord {
            stage: self.stage.stage,
            epoch: st.epoch,
            step: st.step_in_epoch,
            loss,
        });
        st.step_in_epoch += 1;
        st.global_step += 1;
        if st.step_in_epoch * bs >= st.order.len() {
            st.epoch += 1;
            st.step_in_epoch = 0;
            st.order.clear();
        }
        Ok(loss)
    }

    pub fn run_steps(&mut self, data: &[&VideoRecord], steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(data)?;
        }
        Ok(())
    }

    /// Trains until the configured epoch count is reached.
    pub fn run(&mut self, data: &[&VideoRecord]) -> Result<()> {
        while !self.is_finished() {
            self.step(data)?;
        }
        Ok(())
    }

    /// Mean loss of each completed epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        epoch_means(&self.history)
    }
}

pub fn epoch_means(history: &[LossRecord]) -> Vec<f64> {
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for r in history {
        match out.last_mut() {
            Some((e, s, n)) if *e == r.epoch => {
                *s += r.loss;
                *n += 1;
            }
            _ => out.push((r.epoch, r.loss, 1)),
        }
    }
    out.into_iter().map(|(_, s, n)| s / n as f64).collect()
}

/// Trains one stage to completion and returns the updated model with its
/// per-step loss history.
pub fn run_stage<T: Scalar>(
    bundle: ModelBundle<T>,
    data: &[&VideoRecord],
    cfg: &StageConfig,
) -> Result<(ModelBundle<T>, Vec<LossRecord>)> {
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    let mut trainer = Trainer::new(bundle, cfg.clone())?;
    trainer.run(data)?;
    Ok((trainer.bundle, trainer.history))
}

/// Eval-mode loss over `data`, one seeded clip per video, weighted by token count.
pub fn evaluate_loss<T: Scalar>(bundle: &ModelBundle<T>, data: &[&VideoRecord], seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation data is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in data.chunks(4) {
        let mut clips = Vec::new();
        let mut items = Vec::new();
        for v in chunk {
            clips.push(sample_clip(v, &bundle.config.sampler, &mut rng)?);
            items.push(training_items(v));
        }
        let mut g = Graph::inference(&bundle.store);
        let out = batch_loss(&mut g, &bundle.config, &bundle.vocab, &clips, &items, NormMode::Eval)?;
        total += g.tape.values(out.loss)[0].as_f64() * out.tokens as f64;
        tokens += out.tokens;
    }
    Ok(total / tokens as f64)
}
