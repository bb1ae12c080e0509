//! Mini-batch gradient descent on binary cross-entropy.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{is_vulnerable, HagnnModel, ModelError};
use super::tape::{sigmoid, Tape};
use crate::embed::EmbeddedGraph;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("graph `{0}` has no label")]
    Unlabelled(String),
    #[error("training needs at least two graphs covering both labels; {0}")]
    Corpus(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loss became non-finite in epoch {epoch}; weights restored to the end of epoch {last_good}")]
    Diverged { epoch: usize, last_good: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the epoch's batches, before each batch's step.
    pub loss: f64,
    /// Training accuracy of those same forward passes.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Full pass over the training set with the final weights.
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub final_labels: Vec<bool>,
}

/// Loss and per-parameter gradients of one labelled graph.
pub fn graph_gradient(model: &HagnnModel, g: &EmbeddedGraph, target: bool) -> (f64, f64, Vec<Option<Array2<f64>>>) {
    let mut tape = Tape::new(&model.params);
    let f = model.forward(&mut tape, g);
    let z = tape.scalar(f.logit);
    let loss = tape.bce_logits(f.logit, if target { 1.0 } else { 0.0 });
    (tape.scalar(loss), sigmoid(z), tape.backward(loss))
}

/// Mean loss and gradient over a batch.
pub fn batch_gradient(model: &HagnnModel, batch: &[(&EmbeddedGraph, bool)]) -> (f64, Vec<Array2<f64>>) {
    let parts: Vec<(f64, f64, Vec<Option<Array2<f64>>>)> =
        batch.par_iter().map(|(g, y)| graph_gradient(model, g, *y)).collect();
    let n = batch.len().max(1) as f64;
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / n;
    let grads = reduce(parts.into_iter().map(|p| p.2).collect(), model);
    (loss, grads.into_iter().map(|g| g / n).collect())
}

/// Mean loss of a batch without gradients.
pub fn batch_loss(model: &HagnnModel, batch: &[(&EmbeddedGraph, bool)]) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|(g, y)| {
            let mut tape = Tape::new(&model.params);
            let f = model.forward(&mut tape, g);
            let l = tape.bce_logits(f.logit, if *y { 1.0 } else { 0.0 });
            tape.scalar(l)
        })
        .sum();
    total / batch.len().max(1) as f64
}

/// Pairwise tree sum, so the result does not depend on thread scheduling.
fn reduce(mut parts: Vec<Vec<Option<Array2<f64>>>>, model: &HagnnModel) -> Vec<Array2<f64>> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(b) {
                    match (x.as_mut(), y) {
                        (Some(x), Some(y)) => *x += &y,
                        (None, Some(y)) => *x = Some(y),
                        _ => {}
                    }
                }
            }
            next.push(a);
        }
        parts = next;
    }
    let last = parts.pop().unwrap_or_default();
    model
        .params
        .iter()
        .enumerate()
        .map(|(i, p)| last.get(i).cloned().flatten().unwrap_or_else(|| Array2::zeros(p.raw_dim())))
        .collect()
}

fn labels(data: &[EmbeddedGraph]) -> Result<Vec<bool>, TrainError> {
    data.iter()
        .map(|g| g.label.ok_or_else(|| TrainError::Unlabelled(g.name.clone())))
        .collect()
}

/// Train `model` in place; deterministic for a given config seed.
pub fn train(model: &mut HagnnModel, data: &[EmbeddedGraph]) -> Result<History, TrainError> {
    model.config.validate().map_err(TrainError::Config)?;
    let ys = labels(data)?;
    if data.len() < 2 || !ys.iter().any(|&y| y) || ys.iter().all(|&y| y) {
        return Err(TrainError::Corpus(format!(
            "got {} graphs, {} vulnerable",
            data.len(),
            ys.iter().filter(|&&y| y).count()
        )));
    }
    for g in data {
        if g.features.d_t != model.d_t {
            return Err(ModelError::Width {
                name: g.name.clone(),
                found: g.features.d_t,
                expected: model.d_t,
            }
            .into());
        }
    }
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History::default();
    let mut snapshot = model.params.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&EmbeddedGraph, bool)> = chunk.iter().map(|&i| (&data[i], ys[i])).collect();
            let parts: Vec<(f64, f64, Vec<Option<Array2<f64>>>)> =
                batch.par_iter().map(|(g, y)| graph_gradient(model, g, *y)).collect();
            for ((l, s, _), (_, y)) in parts.iter().zip(&batch) {
                loss_sum += l;
                correct += usize::from(is_vulnerable(*s) == *y);
            }
            if parts.iter().any(|p| !p.0.is_finite()) {
                model.params = snapshot;
                return Err(TrainError::Diverged {
                    epoch,
                    last_good: epoch - 1,
                });
            }
            if cfg.learning_rate == 0.0 {
                continue;
            }
            let grads = reduce(parts.into_iter().map(|p| p.2).collect(), model);
            let step = cfg.learning_rate / batch.len() as f64;
            for (p, g) in model.params.iter_mut().zip(grads) {
                p.scaled_add(-step, &g);
            }
        }
        if model.params.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            model.params = snapshot;
            return Err(TrainError::Diverged {
                epoch,
                last_good: epoch - 1,
            });
        }
        snapshot.clone_from(&model.params);
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        log::info!("epoch {epoch}: loss {:.6} accuracy {:.4}", stats.loss, stats.accuracy);
        history.epochs.push(stats);
    }
    let finals: Vec<(f64, f64)> = data
        .par_iter()
        .zip(&ys)
        .map(|(g, &y)| {
            let mut tape = Tape::new(&model.params);
            let f = model.forward(&mut tape, g);
            let s = sigmoid(tape.scalar(f.logit));
            let l = tape.bce_logits(f.logit, if y { 1.0 } else { 0.0 });
            (tape.scalar(l), s)
        })
        .collect();
    history.final_loss = finals.iter().map(|f| f.0).sum::<f64>() / data.len() as f64;
    history.final_labels = finals.iter().map(|f| is_vulnerable(f.1)).collect();
    history.final_accuracy =
        history.final_labels.iter().zip(&ys).filter(|(a, b)| a == b).count() as f64 / data.len() as f64;
    Ok(history)
}
