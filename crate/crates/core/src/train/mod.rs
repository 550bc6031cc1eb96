//! Two-stage optimization, hyperparameter search and checkpointing.

mod bayes;
mod checkpoint;
mod optim;
mod stage;
mod trainer;

pub use bayes::{
    bayes_opt_tune, candidate_grid, expected_improvement, radical_inverse, shifted_halton, Observation, TuneDim,
    TuneResult, TuneSpace, TuneState, CANDIDATES, INITIAL_POINTS, LENGTH_SCALES, NOISE,
};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use optim::{adamw_step, sgd_step, AdamParams, OptimizerKind, OptimizerState, Slot};
pub use stage::{StageConfig, StageKind};
pub use trainer::{epoch_means, evaluate_loss, run_stage, LossRecord, Trainer, TrainerState};
