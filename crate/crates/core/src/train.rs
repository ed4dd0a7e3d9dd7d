//! Mini-batch training shared by both models.
//!
//! Per-example graphs are built in parallel over fixed-size chunks and the
//! chunk results are reduced in chunk order, so the summed gradient does not
//! depend on the number of worker threads.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ModelError, Trainable};
use crate::nn::{AdamState, Gradients, Graph, Var};

/// Examples per parallel work unit.
pub const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Minimum number of loss instances per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            lr: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("lr = {} must be positive", self.lr));
        }
        Ok(())
    }
}

/// Mean loss per optimizer step and per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub steps: Vec<f64>,
    pub epochs: Vec<f64>,
}

impl LossTrace {
    pub fn last_epoch(&self) -> Option<f64> {
        self.epochs.last().copied()
    }
}

/// Summed loss, instance count and gradients over `examples`.
pub fn accumulate<M, E, F>(
    model: &M,
    examples: &[&E],
    loss_fn: &F,
) -> Result<(f64, usize, Gradients), ModelError>
where
    M: Trainable + Sync,
    E: Sync,
    F: Fn(&M, &mut Graph, &E) -> Result<Option<(Var, usize)>, ModelError> + Sync,
{
    let params = model.params();
    let parts: Vec<Result<(f64, usize, Gradients), ModelError>> = examples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::zeros_like(params);
            let mut loss = 0.0;
            let mut count = 0;
            for ex in chunk {
                let mut g = Graph::new(params);
                if let Some((root, n)) = loss_fn(model, &mut g, ex)? {
                    loss += g.scalar(root);
                    count += n;
                    g.backward(root, &mut grads)?;
                }
            }
            Ok((loss, count, grads))
        })
        .collect();
    let mut total = Gradients::zeros_like(params);
    let (mut loss, mut count) = (0.0, 0);
    for part in parts {
        let (l, n, g) = part?;
        loss += l;
        count += n;
        total.add_assign(&g);
    }
    Ok((loss, count, total))
}

/// Shuffles `sizes.len()` examples and packs them into batches holding at
/// least `batch_size` instances each (the last batch may be smaller).
pub fn make_batches(sizes: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > 0).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut filled = 0;
    for i in order {
        cur.push(i);
        filled += sizes[i];
        if filled >= batch_size {
            batches.push(std::mem::take(&mut cur));
            filled = 0;
        }
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

/// Runs `cfg.epochs` epochs of Adam over `examples`. `sizes[i]` is the number
/// of loss instances example `i` contributes; gradients are averaged over
/// instances within each batch.
pub fn fit<M, E, F>(
    model: &mut M,
    adam: &mut AdamState,
    examples: &[E],
    sizes: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    loss_fn: F,
) -> Result<LossTrace, ModelError>
where
    M: Trainable + Sync,
    E: Sync,
    F: Fn(&M, &mut Graph, &E) -> Result<Option<(Var, usize)>, ModelError> + Sync,
{
    cfg.validate().map_err(ModelError::Input)?;
    let mut trace = LossTrace::default();
    for epoch in 0..cfg.epochs {
        let batches = make_batches(sizes, cfg.batch_size, rng);
        let (mut epoch_loss, mut epoch_count) = (0.0, 0);
        for (step, batch) in batches.iter().enumerate() {
            let refs: Vec<&E> = batch.iter().map(|&i| &examples[i]).collect();
            let (loss, count, mut grads) = accumulate(model, &refs, &loss_fn)?;
            if count == 0 {
                continue;
            }
            if !loss.is_finite() || !grads.is_finite() {
                return Err(ModelError::Divergence(format!(
                    "epoch {epoch}, step {step}: loss {loss}, gradient norm {}",
                    grads.l2_norm()
                )));
            }
            grads.scale(1.0 / count as f64);
            adam.step(model.params_mut(), &grads)?;
            trace.steps.push(loss / count as f64);
            epoch_loss += loss;
            epoch_count += count;
        }
        if epoch_count > 0 {
            trace.epochs.push(epoch_loss / epoch_count as f64);
        }
    }
    Ok(trace)
}
