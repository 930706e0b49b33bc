//! Mini-batch Adam with dev-set early stopping and learning-rate annealing.

use std::io::Write;
use std::path::Path;

use ndarray::Zip;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{one_hot, Model, ModelError, ModelSpec, Params};
use crate::features::ViewMatrix;
use crate::util::{mix_seed, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of the squared output-layer norm.
    pub l2: f64,
    /// Stop after this many epochs without a dev-accuracy improvement.
    pub patience: usize,
    pub anneal_factor: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            l2: 0.1,
            patience: 10,
            anneal_factor: 0.5,
            batch_size: 128,
            max_epochs: 1000,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be finite and non-negative");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) {
            return bad("anneal_factor must be in (0, 1]");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        Ok(())
    }

    /// Stagnant epochs between learning-rate cuts.
    pub fn anneal_every(&self) -> usize {
        self.patience.div_ceil(2)
    }
}

/// Inputs aligned with a spec's branches plus integer labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Vec<ViewMatrix>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn rows(&self, rows: &[usize]) -> Vec<ViewMatrix> {
        self.inputs.iter().map(|m| m.select_rows(rows)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-user objective over the epoch's batches.
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the best dev accuracy.
    pub model: Model,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub log: Vec<EpochLog>,
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &Params) -> Self {
        let mut zero = params.clone();
        for l in zero.layers_mut() {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        Self {
            m: zero.clone(),
            v: zero,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let layers = params.layers_mut().zip(grads.layers()).zip(self.m.layers_mut().zip(self.v.layers_mut()));
        for ((p, g), (m, v)) in layers {
            let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            };
            Zip::from(&mut p.weights).and(&g.weights).and(&mut m.weights).and(&mut v.weights).for_each(update);
            Zip::from(&mut p.bias).and(&g.bias).and(&mut m.bias).and(&mut v.bias).for_each(update);
        }
    }
}

fn check_dataset(spec: &ModelSpec, data: &Dataset, name: &'static str) -> Result<(), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset(name));
    }
    if let Some(&label) = data.labels.iter().find(|&&l| l >= spec.num_classes) {
        return Err(ModelError::LabelOutOfRange {
            label,
            num_classes: spec.num_classes,
        });
    }
    for (b, m) in spec.branches.iter().zip(&data.inputs) {
        if m.rows() != data.len() {
            return Err(ModelError::RowMismatch {
                view: b.view.clone(),
                expected: data.len(),
                found: m.rows(),
            });
        }
    }
    Ok(())
}

/// Fraction of rows predicted correctly.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64, ModelError> {
    let pred = model.predict(&data.inputs)?;
    let hits = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / data.len() as f64)
}

pub fn train(spec: &ModelSpec, train: &Dataset, dev: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    spec.validate()?;
    check_dataset(spec, train, "training")?;
    check_dataset(spec, dev, "development")?;
    let mut model = Model::new(spec.clone(), config.seed)?;
    // Validates view dims before any work.
    model.forward(&dev.rows(&[0]))?;

    let mut adam = Adam::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x5EED_7121));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = config.learning_rate;
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut stale = 0;
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, rows) in order.chunks(config.batch_size).enumerate() {
            let x = train.rows(rows);
            let labels: Vec<usize> = rows.iter().map(|&r| train.labels[r]).collect();
            let (loss, grads) = model.loss_and_gradients(&x, &one_hot(&labels, spec.num_classes), config.l2)?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    batch,
                    loss,
                    snapshot_epoch: best.1,
                    snapshot: Box::new(best.0),
                });
            }
            total += loss;
            adam.step(model.params_mut(), &grads, lr);
        }
        let dev_accuracy = accuracy(&model, dev)?;
        log.push(EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            dev_accuracy,
            learning_rate: lr,
        });
        if dev_accuracy > best.2 {
            best = (model.clone(), epoch, dev_accuracy);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
            if stale % config.anneal_every() == 0 {
                lr *= config.anneal_factor;
            }
        }
    }
    let (model, best_epoch, best_dev_accuracy) = best;
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_dev_accuracy,
        log,
    })
}

/// CSV of (epoch, train loss, dev accuracy, lr); `provenance` goes in a
/// leading `#` comment line.
pub fn write_training_log(log: &[EpochLog], path: &Path, provenance: Option<&Provenance>) -> Result<(), ModelError> {
    let io = |e: std::io::Error| ModelError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut file = std::fs::File::create(path).map_err(io)?;
    if let Some(p) = provenance {
        file.write_all(p.comment_line().as_bytes()).map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(file);
    for row in log {
        w.serialize(row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
