//! Minibatch training with surrogate gradients (spiking) or plain
//! backpropagation (conventional).

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::seeds;
use crate::tape::GradTape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub surrogate_width: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            optimizer: Optimizer::Sgd,
            surrogate_width: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if !(self.surrogate_width > 0.0) {
            return Err(Error::invalid("surrogate width must be positive"));
        }
        Ok(())
    }
}

/// Memorisation-friendly variant of `cfg`: twice the epochs (at least 60),
/// no weight decay and small batches. Pair it with a small training half.
pub fn overfit_regime(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        epochs: (2 * cfg.epochs).max(60),
        batch_size: cfg.batch_size.min(16),
        weight_decay: 0.0,
        ..cfg.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean minibatch loss per epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainedModel {
    pub fn gap(&self) -> f64 {
        self.train_accuracy - self.test_accuracy
    }
}

pub fn accuracy(model: &Model, data: &Dataset, ids: &[usize]) -> Result<f64> {
    if ids.is_empty() {
        return Ok(0.0);
    }
    let (x, y) = data.gather(ids);
    let pred = model.predict(&x)?;
    Ok(pred.iter().zip(&y).filter(|(p, y)| p == y).count() as f64 / ids.len() as f64)
}

enum OptState {
    Sgd { velocity: Vec<Tensor> },
    Adam { m: Vec<Tensor>, v: Vec<Tensor>, step: i32 },
}

fn parameters(model: &Model) -> Vec<&Tensor> {
    model
        .layers()
        .iter()
        .flat_map(|l| [&l.weight, &l.bias])
        .collect()
}

fn apply_update(model: &mut Model, grads: &[Tensor], state: &mut OptState, cfg: &TrainConfig) {
    let params = model
        .layers_mut()
        .iter_mut()
        .flat_map(|l| [&mut l.weight, &mut l.bias]);
    match state {
        OptState::Sgd { velocity } => {
            for ((w, g), vel) in params.zip(grads).zip(velocity.iter_mut()) {
                for ((w, &g), v) in w.data_mut().iter_mut().zip(g.data()).zip(vel.data_mut()) {
                    *v = cfg.momentum * *v + g + cfg.weight_decay * *w;
                    *w -= cfg.learning_rate * *v;
                }
            }
        }
        OptState::Adam { m, v, step } => {
            const B1: f32 = 0.9;
            const B2: f32 = 0.999;
            *step += 1;
            let c1 = 1.0 - B1.powi(*step);
            let c2 = 1.0 - B2.powi(*step);
            for (((w, g), m), v) in params.zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                for (((w, &g), m), v) in w
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    let g = g + cfg.weight_decay * *w;
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *w -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// One gradient step on a minibatch; returns the batch loss.
fn step(
    model: &mut Model,
    x: Tensor,
    labels: &[usize],
    state: &mut OptState,
    cfg: &TrainConfig,
) -> Result<f32> {
    let mut tape = GradTape::new();
    let params: Vec<_> = parameters(model)
        .into_iter()
        .map(|p| tape.leaf(p.clone()))
        .collect();
    let input = tape.constant(x);
    let logits = model.forward_taped(&mut tape, &params, input, cfg.surrogate_width)?;
    let loss = tape.cross_entropy(logits, labels)?;
    let loss_value = tape.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Ok(loss_value);
    }
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = params
        .iter()
        .zip(parameters(model))
        .map(|(&id, p)| grads.take(id).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    apply_update(model, &grads, state, cfg);
    Ok(loss_value)
}

/// Trains `model` in place on `train_ids` and evaluates on both halves.
///
/// When `log` is given, one JSON object per epoch (epoch, loss, train_acc,
/// test_acc) is written to it.
pub fn train(
    mut model: Model,
    data: &Dataset,
    train_ids: &[usize],
    test_ids: &[usize],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if model.classes() < data.classes() {
        return Err(Error::invalid(format!(
            "model has {} outputs but dataset has {} classes",
            model.classes(),
            data.classes()
        )));
    }
    if train_ids.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let mut state = match cfg.optimizer {
        Optimizer::Sgd => OptState::Sgd {
            velocity: parameters(&model).iter().map(|p| Tensor::zeros(p.shape())).collect(),
        },
        Optimizer::Adam => OptState::Adam {
            m: parameters(&model).iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: parameters(&model).iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        },
    };
    let mut order = train_ids.to_vec();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seeds::rng(cfg.seed, "train/shuffle", &[epoch as u64]));
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = data.gather(batch);
            let loss = step(&mut model, x, &y, &mut state, cfg)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += loss as f64 * batch.len() as f64;
        }
        let loss = total / order.len() as f64;
        loss_trace.push(loss);
        if let Some(out) = log.as_mut() {
            let record = EpochRecord {
                epoch,
                loss,
                train_acc: accuracy(&model, data, train_ids)?,
                test_acc: accuracy(&model, data, test_ids)?,
            };
            serde_json::to_writer(&mut **out, &record)?;
            out.write_all(b"\n")
                .map_err(|e| Error::io("training log", e))?;
        }
    }
    Ok(TrainedModel {
        train_accuracy: accuracy(&model, data, train_ids)?,
        test_accuracy: accuracy(&model, data, test_ids)?,
        model,
        loss_trace,
    })
}

/// [`train`] with the JSON-lines log written to `path`.
pub fn train_logged(
    model: Model,
    data: &Dataset,
    train_ids: &[usize],
    test_ids: &[usize],
    cfg: &TrainConfig,
    path: &Path,
) -> Result<TrainedModel> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    train(model, data, train_ids, test_ids, cfg, Some(&mut file))
}

/// Continues training a spiking model at a longer latency, starting from
/// its weights.
pub fn sequential_latency_train(
    base: &TrainedModel,
    latency: usize,
    data: &Dataset,
    train_ids: &[usize],
    test_ids: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let Model::Snn(net) = &base.model else {
        return Err(Error::invalid("latency initialisation needs a spiking base model"));
    };
    if latency <= net.latency {
        return Err(Error::invalid(format!(
            "target latency {latency} must exceed base latency {}",
            net.latency
        )));
    }
    let mut next = net.clone();
    next.latency = latency;
    train(Model::Snn(next), data, train_ids, test_ids, cfg, None)
}
