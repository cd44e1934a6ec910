use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mnist::Dataset;
use super::model::{forward, loss_and_backward, Gradients, MlpModel};
use super::optim::OptimizerState;
use super::{NnError, Result};

/// Default evaluation cadence in steps.
pub const EVAL_EVERY: usize = 500;

const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Metrics are recorded every `eval_every` steps and after the final step.
    pub eval_every: usize,
}

impl TrainOptions {
    pub fn new(steps: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            steps,
            batch_size,
            seed,
            eval_every: EVAL_EVERY,
        }
    }
}

/// Callbacks around the optimizer update. Steps are numbered from 1.
pub trait TrainHook {
    /// Runs between backprop and the optimizer update.
    fn adjust_gradients(&mut self, _step: usize, _model: &MlpModel, _grads: &mut Gradients) -> Result<()> {
        Ok(())
    }

    /// Runs after the optimizer update of `step`, before the next batch.
    fn after_update(&mut self, step: usize, total_steps: usize, model: &mut MlpModel) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    /// Mean batch loss since the previous record.
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<MetricRecord>,
}

impl TrainLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.test_accuracy)
    }
}

/// Index order for one epoch; each epoch draws from its own ChaCha stream so
/// orders are reproducible and independent across epochs.
fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Mini-batch training for `options.steps` steps. The final partial batch of an
/// epoch is used as-is. When `eval` is given, test accuracy is recorded at every
/// metrics checkpoint.
pub fn train(
    model: &mut MlpModel,
    data: &Dataset,
    eval: Option<&Dataset>,
    optimizer: &mut OptimizerState,
    options: &TrainOptions,
    mut hook: Option<&mut dyn TrainHook>,
) -> Result<TrainLog> {
    if options.steps == 0 || options.batch_size == 0 || options.eval_every == 0 {
        return Err(NnError::Options(format!(
            "steps, batch size and eval cadence must be positive: {options:?}"
        )));
    }
    if data.is_empty() {
        return Err(NnError::Options("training set is empty".into()));
    }

    let mut log = TrainLog::default();
    let mut epoch = 0u64;
    let mut order = epoch_order(data.len(), options.seed, epoch);
    let mut cursor = 0usize;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);

    for step in 1..=options.steps {
        if cursor >= order.len() {
            epoch += 1;
            order = epoch_order(data.len(), options.seed, epoch);
            cursor = 0;
        }
        let end = (cursor + options.batch_size).min(order.len());
        let (batch, labels) = data.batch(&order[cursor..end]);
        cursor = end;

        let (loss, mut grads) = loss_and_backward(model, &batch, &labels)?;
        loss_sum += loss;
        loss_count += 1;
        if let Some(h) = hook.as_deref_mut() {
            h.adjust_gradients(step, model, &mut grads)?;
        }
        optimizer.step(model, &grads)?;
        if let Some(h) = hook.as_deref_mut() {
            h.after_update(step, options.steps, model)?;
        }

        if step % options.eval_every == 0 || step == options.steps {
            let test_accuracy = match eval {
                Some(e) => Some(evaluate(model, e)?),
                None => None,
            };
            log.records.push(MetricRecord {
                step,
                train_loss: loss_sum / loss_count as f64,
                test_accuracy,
            });
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    Ok(log)
}

/// Fraction of samples whose arg-max logit (lowest index on ties) matches the label.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (batch, labels) = data.batch(chunk);
        let cache = forward(model, &batch)?;
        let logits = cache.logits();
        for (i, &label) in labels.iter().enumerate() {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
