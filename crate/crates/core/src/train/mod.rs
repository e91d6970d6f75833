//! Weighted cross-entropy training with Adam and early stopping.

pub mod split;

use std::io::Write;

use advkit_diff::loss::{cross_entropy, Reduction};
use advkit_diff::{DiffError, Gradients, Graph, Mode, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{invalid, Error, Result};
use crate::eval::{bca, rca};
use crate::models::{Model, BATCH_CHUNK};

pub use split::{make_splits, Split, SplitKind, SplitPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0 && self.epsilon > 0.0 && self.batch_size > 0 && self.patience > 0;
        let betas = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !positive || !betas {
            return Err(invalid(format!("invalid training configuration {self:?}")));
        }
        if self.patience >= self.max_epochs {
            return Err(invalid(format!(
                "patience {} must be below max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// `N / (K · n_c)` for each class.
pub fn class_weights(labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        if l >= classes {
            return Err(invalid(format!("label {l} outside [0, {classes})")));
        }
        counts[l] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 {
                Err(Error::EmptyClass { class: c })
            } else {
                Ok(labels.len() as f64 / (classes * n) as f64)
            }
        })
        .collect()
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self { lr: cfg.learning_rate, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.epsilon, step: 0, m: vec![], v: vec![] }
    }

    /// One update of every parameter tensor of `graph` from `grads`.
    pub fn step(&mut self, graph: &mut Graph<f32>, grads: &Gradients<f32>) {
        if self.m.is_empty() {
            self.m = grads.flat().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in graph.params_mut().zip(grads.flat()).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi as f64;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *w = (*w as f64 - update) as f32;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Wait,
    Stop,
}

/// Tracks the best validation loss and signals when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best_loss: f64::INFINITY, best_epoch: 0, since_best: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Verdict {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            Verdict::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Wait
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_rca: f64,
    pub val_bca: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "val_loss", "val_rca", "val_bca"])?;
        for r in &self.records {
            out.write_record([
                r.epoch.to_string(),
                format!("{:.6}", r.train_loss),
                format!("{:.6}", r.val_loss),
                format!("{:.6}", r.val_rca),
                format!("{:.6}", r.val_bca),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Weighted mean cross entropy over `set` in eval mode, with predictions.
pub fn evaluate_loss(model: &Model, set: &EpochSet, weights: Option<&[f32]>) -> Result<(f64, Vec<usize>)> {
    let y = set.targets()?;
    let x = set.data();
    let (mut total, mut norm) = (0.0f64, 0.0f64);
    let mut pred = Vec::with_capacity(y.len());
    for start in (0..y.len()).step_by(BATCH_CHUNK) {
        let end = (start + BATCH_CHUNK).min(y.len());
        let idx: Vec<usize> = (start..end).collect();
        let logits = model.logits(&x.select(&idx))?;
        let (j, _) = cross_entropy(&logits, &y[start..end], weights, Reduction::Sum)?;
        total += j as f64;
        norm += y[start..end].iter().map(|&l| weights.map_or(1.0, |w| w[l] as f64)).sum::<f64>();
        pred.extend((0..logits.batch()).map(|i| crate::models::argmax(logits.item(i))));
    }
    Ok((total / norm, pred))
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Engine(DiffError::NonFinite { stage, layer }) => {
            Error::Divergence { epoch, reason: format!("non-finite {stage} at layer {layer}") }
        }
        other => other,
    }
}

/// Trains `model` on `train`, stopping on `val` loss, and returns the
/// parameters of the best validation epoch.
pub fn train_model(mut model: Model, train: &EpochSet, val: &EpochSet, cfg: &TrainConfig) -> Result<(Model, History)> {
    cfg.validate()?;
    let k = model.classes();
    if train.n_classes() != k || val.n_classes() != k {
        return Err(invalid(format!(
            "model has {k} classes, sets have {} and {}",
            train.n_classes(),
            val.n_classes()
        )));
    }
    if train.is_empty() || val.is_empty() {
        return Err(invalid("training and validation sets must be nonempty"));
    }
    let y = train.targets()?;
    val.targets()?;
    if model.front_end().is_some_and(|f| !f.fitted) {
        model.fit_front_end(train)?;
    }
    let weights: Option<Vec<f32>> = if cfg.class_weighting {
        Some(class_weights(&y, k)?.into_iter().map(|w| w as f32).collect())
    } else {
        None
    };
    let w = weights.as_deref();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.graph().clone();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        model.graph_mut().set_mode(Mode::Train);
        let (mut sum, mut norm) = (0.0f64, 0.0f64);
        for batch in order.chunks(cfg.batch_size) {
            let x: Tensor<f32> = train.data().select(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let graph = model.graph_mut();
            let trace = graph.forward_train(&x, &mut rng).map_err(Error::from).map_err(diverged(epoch))?;
            let logits = trace.output().expect("forward records output");
            let (loss, d) = cross_entropy(logits, &yb, w, Reduction::WeightedMean)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, reason: "training loss is not finite".into() });
            }
            let bw: f64 = yb.iter().map(|&l| w.map_or(1.0, |w| w[l] as f64)).sum();
            sum += loss as f64 * bw;
            norm += bw;
            let grads = graph.backward(&trace, &d, false).map_err(Error::from).map_err(diverged(epoch))?;
            drop(trace);
            adam.step(graph, &grads);
        }
        model.graph_mut().set_mode(Mode::Eval);
        let (val_loss, pred) = evaluate_loss(&model, val, w).map_err(diverged(epoch))?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, reason: "validation loss is not finite".into() });
        }
        let truth = val.targets()?;
        history.records.push(EpochRecord {
            epoch,
            train_loss: sum / norm,
            val_loss,
            val_rca: rca(&pred, &truth)?,
            val_bca: bca(&pred, &truth, k).unwrap_or(f64::NAN),
        });
        match stopper.observe(epoch, val_loss) {
            Verdict::Improved => best = model.graph().clone(),
            Verdict::Wait => {}
            Verdict::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = stopper.best_epoch();
    *model.graph_mut() = best;
    model.graph_mut().set_mode(Mode::Eval);
    Ok((model, history))
}
