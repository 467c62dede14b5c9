//! Mini-batch training with categorical cross-entropy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, step_seed, Gradients, Mode, ModelGraph, ModelInput};
use crate::error::{Error, Result};
use crate::metrics::macro_f1;
use crate::rng::{derive_seed, seeded};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adagrad,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Rescale the batch gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adagrad,
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Parameter(format!("clip norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's training steps.
    pub loss: f64,
    /// Macro-F1 of the predictions made while training the epoch.
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

const ADAGRAD_INITIAL: f64 = 0.1;
const ADAGRAD_EPS: f64 = 1e-7;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

enum State {
    Adagrad { acc: Vec<Tensor> },
    Adam { m: Vec<Tensor>, v: Vec<Tensor>, t: i32 },
}

impl State {
    fn new(kind: Optimizer, model: &ModelGraph) -> Self {
        let zeros = || model.zero_gradients().0;
        match kind {
            Optimizer::Adagrad => {
                let mut acc = zeros();
                for a in &mut acc {
                    a.as_mut_slice().fill(ADAGRAD_INITIAL);
                }
                State::Adagrad { acc }
            }
            Optimizer::Adam => State::Adam {
                m: zeros(),
                v: zeros(),
                t: 0,
            },
        }
    }

    fn step(&mut self, params: Vec<&mut Tensor>, grads: &Gradients, lr: f64) {
        match self {
            State::Adagrad { acc } => {
                for ((p, g), a) in params.into_iter().zip(&grads.0).zip(acc.iter_mut()) {
                    let it = p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(a.as_mut_slice());
                    for ((p, &g), a) in it {
                        *a += g * g;
                        *p -= lr * g / (a.sqrt() + ADAGRAD_EPS);
                    }
                }
            }
            State::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                for (((p, g), m), v) in params.into_iter().zip(&grads.0).zip(m.iter_mut()).zip(v.iter_mut()) {
                    let it = p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(m.as_mut_slice())
                        .zip(v.as_mut_slice());
                    for (((p, &g), m), v) in it {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

fn cross_entropy(scores: &[f64], label: usize) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    lse - scores[label]
}

/// Trains `model` in place. The sample order is reshuffled every epoch and
/// each step's dropout/noise stream is derived from `config.seed`, so runs
/// with equal inputs and seed produce identical parameters.
pub fn train(
    model: &mut ModelGraph,
    inputs: &[ModelInput],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if inputs.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::NoDocuments);
    }
    let k = model.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Parameter(format!("label {bad} outside {k} classes")));
    }
    let mut state = State::new(config.optimizer, model);
    let mut order_rng = seeded(derive_seed(config.seed, u64::MAX));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut predicted = vec![0; inputs.len()];
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = model.zero_gradients();
            for (j, &idx) in batch.iter().enumerate() {
                let step = b * config.batch_size + j;
                let seed = step_seed(config.seed, epoch, step);
                let trace = match model.forward(&inputs[idx], Mode::Train { seed }) {
                    Ok(t) => t,
                    Err(Error::Numeric { .. }) => return Err(Error::Divergence { epoch }),
                    Err(e) => return Err(e),
                };
                let p = &trace.prediction;
                loss_sum += cross_entropy(&p.scores, labels[idx]);
                predicted[idx] = argmax(&p.probs);
                let mut d = p.probs.clone();
                d[labels[idx]] -= 1.0;
                model.backward(&trace, &d, Some(&mut grads));
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(clip) = config.clip_norm {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            state.step(model.params_mut(), &grads, config.learning_rate);
        }
        let loss = loss_sum / inputs.len() as f64;
        if !loss.is_finite() || !model.all_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.epochs.push(EpochStats {
            epoch,
            loss,
            macro_f1: macro_f1(labels, &predicted, k)?,
        });
    }
    Ok(history)
}
