use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{backward_pass, bce_and_grad, forward_pass, update_running_stats, Mode};
use super::*;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{compute_metrics, Metrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-F1 improvement before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Weight each class by `n / (2 n_class)` in the loss.
    pub class_weighting: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            early_stop_patience: 8,
            seed: 0,
            class_weighting: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_eps <= 0.0
        {
            return Err(Error::Config(
                "Adam betas must lie in [0, 1) and eps be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Inputs and binary labels (true = atypical).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Matrix<f32>>,
    pub labels: Vec<bool>,
}

impl Dataset {
    pub fn new(inputs: Vec<Matrix<f32>>, labels: Vec<bool>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs for {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(first) = inputs.first() {
            if inputs
                .iter()
                .any(|x| x.rows() != first.rows() || x.cols() != first.cols())
            {
                return Err(Error::Shape("inputs differ in shape".into()));
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches (train mode, dropout on).
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub train_f1: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
    /// This epoch set a new best validation F1.
    pub improved: bool,
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: i32,
}

impl Adam {
    fn new(params: &[Vec<f32>]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [Vec<f32>], grads: &[Vec<f32>], tc: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (tc.adam_beta1, tc.adam_beta2);
        let c1 = (1.0 - b1.powi(self.step)) as f32;
        let c2 = (1.0 - b2.powi(self.step)) as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        let (lr, eps) = (tc.learning_rate as f32, tc.adam_eps as f32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

fn class_weights(labels: &[bool], enabled: bool) -> [f32; 2] {
    let n = labels.len() as f32;
    let pos = labels.iter().filter(|&&y| y).count() as f32;
    let neg = n - pos;
    if !enabled || pos == 0.0 || neg == 0.0 {
        return [1.0, 1.0];
    }
    [n / (2.0 * neg), n / (2.0 * pos)]
}

/// Eval-mode probabilities, metrics and mean unweighted loss.
pub fn evaluate(model: &TdnnModel<f32>, data: &Dataset) -> Result<(Metrics, Vec<Prediction>, f64)> {
    for x in &data.inputs {
        model.check_input(x)?;
    }
    let mut preds = Vec::with_capacity(data.len());
    let mut total = 0.0;
    for (xs, ys) in data.inputs.chunks(64).zip(data.labels.chunks(64)) {
        let refs: Vec<&[f32]> = xs.iter().map(Matrix::as_slice).collect();
        let pass = forward_pass(model, &refs, Mode::Eval, None);
        let (bce, _) = bce_and_grad(&pass.probs, ys, None);
        total += f64::from(bce) * ys.len() as f64;
        preds.extend(
            pass.probs
                .iter()
                .map(|&p| Prediction::from_probability(f64::from(p))),
        );
    }
    let labels: Vec<bool> = preds.iter().map(|p| p.label).collect();
    let metrics = compute_metrics(&labels, &data.labels)?;
    let l2 = model.config.l2_lambda * f64::from(model.weight_norm_sq());
    Ok((metrics, preds, total / data.len() as f64 + l2))
}

/// Adam on weighted BCE + L2 with early stopping on validation F1. Returns
/// the snapshot with the best validation F1 and the per-epoch history.
///
/// Shuffling and dropout masks come from one generator seeded with
/// `tc.seed`, so a run is bitwise reproducible.
pub fn train(
    model: TdnnModel<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    tc: &TrainConfig,
) -> Result<(TdnnModel<f32>, Vec<EpochRecord>)> {
    tc.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Dataset(
            "training and validation sets must be non-empty".into(),
        ));
    }
    for x in train_set.inputs.iter().chain(&val_set.inputs) {
        model.check_input(x)?;
    }
    let weights = class_weights(&train_set.labels, tc.class_weighting);
    let lambda = model.config.l2_lambda as f32;
    let is_weight: Vec<bool> = model.config.param_shapes().iter().map(|s| s.2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut adam = Adam::new(&model.params);
    let mut model = model;
    let mut best = (model.clone(), -1.0f64, 0usize);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut train_pred = vec![false; train_set.len()];
        for batch in order.chunks(tc.batch_size) {
            let refs: Vec<&[f32]> = batch
                .iter()
                .map(|&i| train_set.inputs[i].as_slice())
                .collect();
            let labels: Vec<bool> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let w: Vec<f32> = labels.iter().map(|&y| weights[usize::from(y)]).collect();
            let pass = forward_pass(&model, &refs, Mode::Train, Some(&mut rng));
            let (bce, dl) = bce_and_grad(&pass.probs, &labels, Some(&w));
            let batch_loss = f64::from(bce) + f64::from(lambda * model.weight_norm_sq());
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss * batch.len() as f64;
            for (&i, &p) in batch.iter().zip(&pass.probs) {
                train_pred[i] = p >= 0.5;
            }
            let mut grads = backward_pass(&model, &refs, &pass, &dl, None);
            for ((g, p), &w) in grads.iter_mut().zip(&model.params).zip(&is_weight) {
                if w {
                    g.iter_mut()
                        .zip(p)
                        .for_each(|(g, &v)| *g += 2.0 * lambda * v);
                }
            }
            adam.update(&mut model.params, &grads, tc);
            update_running_stats(&mut model, &pass, batch.len());
        }
        if !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        let train_m = compute_metrics(&train_pred, &train_set.labels)?;
        let (val_m, _, val_loss) = evaluate(&model, val_set)?;
        let improved = val_m.f1 > best.1;
        if improved {
            best = (model.clone(), val_m.f1, epoch);
        }
        log::debug!(
            "epoch {epoch}: loss {:.4} train f1 {:.3} val f1 {:.3}",
            loss_sum / train_set.len() as f64,
            train_m.f1,
            val_m.f1
        );
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: train_m.accuracy,
            train_f1: train_m.f1,
            val_loss,
            val_accuracy: val_m.accuracy,
            val_f1: val_m.f1,
            improved,
        });
        if epoch - best.2 >= tc.early_stop_patience {
            break;
        }
    }
    Ok((best.0, history))
}
