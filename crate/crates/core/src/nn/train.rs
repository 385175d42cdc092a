use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Model, NetParams, Trainer};
use super::tensor::{Scalar, Tensor4};
use crate::error::{invalid, shape, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update from `params.grads`. Non-finite gradients
/// abort before anything is modified.
pub fn adam_step<T: Scalar>(params: &mut NetParams<T>, cfg: &AdamConfig) -> Result<()> {
    if let Some(i) = params.grads.iter().position(|g| !g.is_finite()) {
        let name = params
            .entries
            .iter()
            .find(|e| i >= e.offset && i < e.offset + e.len())
            .map_or("?", |e| e.name.as_str());
        return Err(Error::Numerical(format!("non-finite gradient in {name} at step {}", params.adam.t + 1)));
    }
    let st = &mut params.adam;
    st.t += 1;
    let t = st.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.values.len() {
        let g = params.grads[i].as_f64();
        let m = cfg.beta1 * st.m[i].as_f64() + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * st.v[i].as_f64() + (1.0 - cfg.beta2) * g * g;
        st.m[i] = T::of(m);
        st.v[i] = T::of(v);
        let step = cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        params.values[i] = T::of(params.values[i].as_f64() - step);
    }
    Ok(())
}

/// Tracks the best validation score; signals a stop once `patience` epochs
/// pass without a strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_score: f64,
    pub best_epoch: usize,
    epochs_seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best_score: f64::NEG_INFINITY, best_epoch: 0, epochs_seen: 0 }
    }

    /// Records one epoch (numbered from 1). Returns `(improved, stop)`.
    pub fn update(&mut self, score: f64) -> (bool, bool) {
        self.epochs_seen += 1;
        let improved = score > self.best_score;
        if improved {
            self.best_score = score;
            self.best_epoch = self.epochs_seen;
        }
        (improved, self.epochs_seen - self.best_epoch >= self.patience)
    }
}

/// Windows of one shape with class labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub x: Vec<f32>,
    pub labels: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn new(height: usize, width: usize) -> Self {
        Self { x: vec![], labels: vec![], height, width }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, window: &[f32], label: usize) -> Result<()> {
        if window.len() != self.height * self.width {
            return Err(shape(format!("window of {} values, expected {}x{}", window.len(), self.height, self.width)));
        }
        self.x.extend_from_slice(window);
        self.labels.push(label);
        Ok(())
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let sz = self.height * self.width;
        &self.x[i * sz..(i + 1) * sz]
    }

    pub fn distinct_classes(&self) -> usize {
        let mut seen = [false; 64];
        for &l in &self.labels {
            seen[l.min(63)] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }

    fn batch<T: Scalar>(&self, idx: &[usize]) -> (Tensor4<T>, Vec<usize>) {
        let sz = self.height * self.width;
        let mut data = Vec::with_capacity(idx.len() * sz);
        for &i in idx {
            data.extend(self.window(i).iter().map(|&v| T::of(v as f64)));
        }
        let t = Tensor4 { shape: [idx.len(), self.height, self.width, 1], data };
        (t, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), batch_size: 64, max_epochs: 60, patience: 10, seed: 7 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_acc\n");
        for e in &self.epochs {
            writeln!(s, "{},{:.6},{:.6},{:.6}", e.epoch, e.train_loss, e.train_acc, e.val_acc).expect("string write");
        }
        s
    }
}

/// Fraction of `data` whose argmax prediction matches the label.
pub fn accuracy<T: Scalar>(model: &Model<T>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let probs = model.predict(&Tensor4::from_windows(&data.x, data.len(), data.height, data.width)?)?;
    let hits = probs.iter().zip(&data.labels).filter(|(p, &l)| p.argmax() == l).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Mini-batch Adam on mean cross-entropy with early stopping on validation
/// accuracy. The model is left holding the best-validation parameters.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if train_set.distinct_classes() < 2 {
        return Err(invalid("training set needs at least two classes"));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(invalid("batch_size and max_epochs must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience.max(1));
    let mut best = (model.params.values.clone(), model.params.buffers.clone());
    let mut history = TrainHistory::default();
    let mut trainer = Trainer::default();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let (x, labels) = train_set.batch::<T>(idx);
            let probs = model.forward_train(&mut trainer, &x)?;
            let k = model.config.n_classes;
            hits += labels
                .iter()
                .enumerate()
                .filter(|(i, &l)| {
                    let p = &probs[i * k..(i + 1) * k];
                    (0..k).all(|j| p[j] < p[l] || (p[j] == p[l] && j >= l))
                })
                .count();
            loss_sum += model.backward(&mut trainer, &labels)? * idx.len() as f64;
            adam_step(&mut model.params, &cfg.adam)?;
        }
        if !loss_sum.is_finite() {
            return Err(Error::Numerical(format!("training loss diverged in epoch {epoch}")));
        }
        let val_acc = if val_set.is_empty() { hits as f64 / train_set.len() as f64 } else { accuracy(model, val_set)? };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: hits as f64 / train_set.len() as f64,
            val_acc,
        });
        let (improved, stop) = stopper.update(val_acc);
        if improved {
            best = (model.params.values.clone(), model.params.buffers.clone());
        }
        if stop {
            break;
        }
    }
    model.params.values = best.0;
    model.params.buffers = best.1;
    history.best_epoch = stopper.best_epoch;
    history.best_val_acc = stopper.best_score;
    Ok(history)
}
