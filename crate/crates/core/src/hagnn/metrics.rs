//! Confusion counts, derived rates and stratified cross-validation.
//!
//! A rate whose denominator is zero is reported as `None`, never as 0.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{HagnnConfig, HagnnModel, ModelError};
use super::train::{train, History, TrainError};
use crate::embed::{EmbeddedGraph, PropertyVocabulary};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{folds}-fold evaluation needs at least {folds} labelled graphs, got {graphs}")]
    TooFew { folds: usize, graphs: usize },
    #[error("at least two folds are required")]
    Folds,
    #[error("graph `{0}` has no label")]
    Unlabelled(String),
    #[error("fold {fold}: {source}")]
    Train { fold: usize, source: TrainError },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Confusion {
    /// Tally `(predicted, actual)` pairs, `true` meaning vulnerable.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Confusion::default();
        for (p, a) in pairs {
            match (p, a) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&self, other: &Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn metrics(&self) -> Metrics {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Metrics {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1,
            fpr: ratio(self.fp, self.fp + self.tn),
            fnr: ratio(self.fn_, self.fn_ + self.tp),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

impl Metrics {
    fn fields(&self) -> [Option<f64>; 6] {
        [self.accuracy, self.precision, self.recall, self.f1, self.fpr, self.fnr]
    }

    /// Geometric mean of each metric over the folds where it is defined.
    pub fn geometric_mean(folds: &[Metrics]) -> Metrics {
        let per: Vec<[Option<f64>; 6]> = folds.iter().map(Metrics::fields).collect();
        let col = |i: usize| geometric_mean(&per.iter().filter_map(|f| f[i]).collect::<Vec<_>>());
        Metrics {
            accuracy: col(0),
            precision: col(1),
            recall: col(2),
            f1: col(3),
            fpr: col(4),
            fnr: col(5),
        }
    }
}

/// `None` for an empty slice; 0 if any value is 0.
pub fn geometric_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    if values.iter().any(|&v| v <= 0.0) {
        return Some(0.0);
    }
    Some((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

/// Test-set indices of `k` folds; each class is spread evenly over the folds.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    // Negatives continue the round-robin where positives stopped, which
    // keeps fold sizes within one of each other.
    for (j, i) in pos.iter().chain(&neg).enumerate() {
        folds[j % k].push(*i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// Confusion counts of a model over labelled graphs.
pub fn evaluate(model: &HagnnModel, graphs: &[EmbeddedGraph]) -> Result<Confusion, EvalError> {
    let mut pairs = Vec::with_capacity(graphs.len());
    for g in graphs {
        let actual = g.label.ok_or_else(|| EvalError::Unlabelled(g.name.clone()))?;
        pairs.push((model.classify(g)?.1, actual));
    }
    Ok(Confusion::from_pairs(pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub history: History,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldReport>,
    /// Counts summed over all test folds.
    pub confusion: Confusion,
    pub geometric_mean: Metrics,
}

/// Stratified k-fold cross-validation: a fresh model per fold.
pub fn cross_validate(
    graphs: &[EmbeddedGraph],
    config: &HagnnConfig,
    vocab: &PropertyVocabulary,
    folds: usize,
) -> Result<EvalReport, EvalError> {
    if folds < 2 {
        return Err(EvalError::Folds);
    }
    if graphs.len() < folds {
        return Err(EvalError::TooFew {
            folds,
            graphs: graphs.len(),
        });
    }
    let labels: Vec<bool> = graphs
        .iter()
        .map(|g| g.label.ok_or_else(|| EvalError::Unlabelled(g.name.clone())))
        .collect::<Result<_, _>>()?;
    let d_t = graphs[0].features.d_t;
    let split = stratified_folds(&labels, folds, config.seed);
    let mut reports = Vec::with_capacity(folds);
    for (f, test_idx) in split.iter().enumerate() {
        let in_test: std::collections::HashSet<usize> = test_idx.iter().copied().collect();
        let train_set: Vec<EmbeddedGraph> =
            (0..graphs.len()).filter(|i| !in_test.contains(i)).map(|i| graphs[i].clone()).collect();
        let test_set: Vec<EmbeddedGraph> = test_idx.iter().map(|&i| graphs[i].clone()).collect();
        let mut model = HagnnModel::new(config.clone(), d_t, vocab.clone());
        let history = train(&mut model, &train_set).map_err(|source| EvalError::Train { fold: f + 1, source })?;
        let confusion = evaluate(&model, &test_set)?;
        log::info!("fold {}: {:?}", f + 1, confusion);
        reports.push(FoldReport {
            fold: f + 1,
            train_size: train_set.len(),
            test_size: test_set.len(),
            metrics: confusion.metrics(),
            confusion,
            history,
        });
    }
    let confusion = reports.iter().fold(Confusion::default(), |acc, r| acc.merge(&r.confusion));
    let geometric_mean = Metrics::geometric_mean(&reports.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok(EvalReport {
        folds: reports,
        confusion,
        geometric_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_pair() {
        let m = Confusion { tp: 1, tn: 1, fp: 0, fn_: 0 }.metrics();
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.f1, Some(1.0));
        assert_eq!(m.fpr, Some(0.0));
    }

    #[test]
    fn ninety_percent() {
        let m = Confusion { tp: 45, tn: 45, fp: 5, fn_: 5 }.metrics();
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            assert!((v.unwrap() - 0.9).abs() < 1e-12);
        }
        assert!((m.fpr.unwrap() - 0.1).abs() < 1e-12);
        assert!((m.fnr.unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn undefined_rates_are_absent() {
        let m = Confusion { tp: 0, tn: 4, fp: 0, fn_: 0 }.metrics();
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!((m.precision, m.recall, m.f1, m.fnr), (None, None, None, None));
        assert_eq!(m.fpr, Some(0.0));
    }

    #[test]
    fn geometric_mean_of_equal_values() {
        assert!((geometric_mean(&[0.8; 5]).unwrap() - 0.8).abs() < 1e-12);
        assert!((geometric_mean(&[1.0, 4.0]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(geometric_mean(&[]), None);
        let m = Metrics {
            accuracy: Some(0.7),
            ..Default::default()
        };
        let g = Metrics::geometric_mean(&[m; 5]);
        assert!((g.accuracy.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(g.f1, None);
    }

    #[test]
    fn folds_partition_and_stratify() {
        let labels: Vec<bool> = (0..23).map(|i| i % 3 == 0).collect();
        let folds = stratified_folds(&labels, 5, 1);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        for f in &folds {
            assert!((4..=5).contains(&f.len()));
            let pos = f.iter().filter(|&&i| labels[i]).count();
            assert!((1..=2).contains(&pos));
        }
        assert_eq!(folds, stratified_folds(&labels, 5, 1));
    }
}
