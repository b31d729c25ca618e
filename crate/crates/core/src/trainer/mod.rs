//! Two-phase optimization: bidirectional pretraining on the doubled corpus,
//! then finetuning on the required direction.
//!
//! A run is a sequence of *segments*. Each segment starts a fresh batch
//! stream over one corpus and trains from the current step up to an end
//! step; the bidirectional pipeline is two segments split at
//! `pretrain_steps`. Resuming from a checkpoint starts a new segment, so
//! training phase by phase from the command line reproduces the in-process
//! pipeline exactly.

mod adam;
mod batching;
mod config;
mod run;
mod schedule;

pub use adam::Adam;
pub use batching::{make_batches, BatchStream};
pub use config::{TrainingConfig, CONFIG_VERSION, DROPOUT_GRID};
pub use run::{
    average_checkpoints, checkpoint_path, encode_corpus, latest_checkpoints, read_metrics,
    finetune_phase, finish_run, pretrain_phase, run_bit_pipeline, run_model_config, train_segment, validation_loss, MetricsRecord, PipelineOutput, RunDirs,
    TrainState, ValidSets, FINAL_CHECKPOINT, PRETRAIN_CHECKPOINT,
};
pub use schedule::{pretrain_steps, Phase, Schedule};

pub use crate::model::checkpoint::OptimizerState;

use crate::error::{Error, Result};
use crate::model::{backward, Batch, LossValue, Mode};
use crate::rng::{derive_key, label};

/// One Adam update on `batch` with the learning rate of `state.step`.
///
/// Non-finite losses or gradients abort before anything is modified, and
/// an update that would produce non-finite parameters is rolled back, so
/// `state` always holds the last good values.
pub fn train_step(state: &mut TrainState, batch: &Batch, cfg: &TrainingConfig, schedule: &Schedule) -> Result<LossValue> {
    let lr = schedule.lr_at(state.step)?;
    let dropout_seed = derive_key(cfg.seed, &[label("dropout"), state.step]);
    let (loss, grads) = backward(&state.params, batch, cfg.label_smoothing, Mode::Train { dropout_seed })?;
    if !loss.mean().is_finite() {
        return Err(Error::NonFinite {
            site: format!("training loss at step {}", state.step),
        });
    }
    grads.check_finite("gradient")?;
    let adam = Adam {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    };
    let (params_before, opt_before) = (state.params.data.clone(), state.opt.clone());
    if let Err(e) = adam.update(&mut state.params.data, &grads.data, &mut state.opt, lr) {
        state.params.data = params_before;
        state.opt = opt_before;
        return Err(e);
    }
    state.step += 1;
    Ok(loss)
}
