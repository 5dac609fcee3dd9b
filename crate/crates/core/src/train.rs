//! Per-candidate training loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{adam_step, lr_at, AdamState, GradError, TrainConfig};
use crate::liv::{CompiledBackbone, LivError, Sequence};
use crate::Scalar;

/// Deterministic supplier of training batches and a fixed evaluation set.
pub trait BatchSource: Sync {
    /// Batch for optimizer step `step`; a pure function of its arguments.
    fn train_batch(&self, step: usize, size: usize, seed: u64) -> Vec<Sequence>;
    fn eval_set(&self) -> &[Sequence];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<LossPoint>,
    pub initial_eval_loss: f64,
    pub eval_loss: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Config(#[from] GradError),
    #[error(transparent)]
    Model(LivError),
}

fn model_err(step: usize) -> impl Fn(LivError) -> TrainError {
    move |e| match e {
        LivError::NonFinite { .. } => TrainError::Diverged { step },
        other => TrainError::Model(other),
    }
}

const EVAL_CHUNK: usize = 8;

/// Mean held-out cross-entropy, weighted by target count.
pub fn eval_loss<T: Scalar>(model: &CompiledBackbone<T>, eval: &[Sequence]) -> Result<f64, LivError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in eval.chunks(EVAL_CHUNK) {
        let n: usize = chunk.iter().map(|s| s.targets.iter().flatten().count()).sum();
        if n == 0 {
            continue;
        }
        total += model.loss(chunk)? * n as f64;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Trains `model` in place with AdamW on the warm-up/cosine schedule and
/// returns the per-step loss curve with held-out losses before and after.
/// A non-finite loss at any step aborts with [`TrainError::Diverged`].
pub fn train<T: Scalar>(
    model: &mut CompiledBackbone<T>,
    task: &dyn BatchSource,
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    let initial = eval_loss(model, task.eval_set()).map_err(model_err(0))?;
    if !initial.is_finite() {
        return Err(TrainError::Diverged { step: 0 });
    }
    let mut state = AdamState::new(model.params().tensors(), model.params().decay_mask().to_vec());
    let mut curve = Vec::with_capacity(config.total_steps);
    for step in 0..config.total_steps {
        let batch = task.train_batch(step, config.batch, config.seed);
        let (loss, mut grads) = model.loss_and_grads(&batch).map_err(model_err(step))?;
        if !loss.is_finite() || !grads.iter().all(|g| g.is_finite()) {
            return Err(TrainError::Diverged { step });
        }
        let grad_norm =
            adam_step(model.params_mut().tensors_mut(), &mut grads, &mut state, config, step + 1)?;
        curve.push(LossPoint { step, loss, lr: lr_at(step + 1, config), grad_norm });
    }
    let final_loss = eval_loss(model, task.eval_set()).map_err(model_err(config.total_steps))?;
    if !final_loss.is_finite() {
        return Err(TrainError::Diverged { step: config.total_steps });
    }
    Ok(TrainReport { curve, initial_eval_loss: initial, eval_loss: final_loss })
}
