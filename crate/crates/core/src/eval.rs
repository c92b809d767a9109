//! Frozen-representation evaluation: cosine kNN with majority vote and a
//! full-batch softmax linear probe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, UnitRep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Knn,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub top1_accuracy: f64,
    pub n_test: usize,
    pub k_or_epochs: usize,
}

/// Representations with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledReps {
    pub reps: Vec<UnitRep>,
    pub labels: Vec<usize>,
}

impl LabeledReps {
    pub fn new(reps: Vec<UnitRep>, labels: Vec<usize>) -> Result<Self> {
        if reps.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: reps.len(),
                got: labels.len(),
            });
        }
        Ok(LabeledReps { reps, labels })
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// Predicted label for one query.
///
/// Neighbours are ranked by similarity (descending), then label (ascending);
/// the vote is broken by summed similarity, then by smaller label. Neither
/// step depends on the order of the training set.
pub fn knn_predict(train: &LabeledReps, query: &[f64], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::ConfigInvalid("k must be >= 1".into()));
    }
    if k > train.len() {
        return Err(Error::KTooLarge { k, n: train.len() });
    }
    let mut scored: Vec<(f64, usize)> = train
        .reps
        .iter()
        .zip(&train.labels)
        .map(|(r, &y)| (dot(r.as_slice(), query), y))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    let mut votes = vec![(0usize, 0.0f64); train.n_classes()];
    for &(s, y) in &scored {
        votes[y].0 += 1;
        votes[y].1 += s;
    }
    let best = votes
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(ib.cmp(ia)))
        .map(|(i, _)| i)
        .expect("k >= 1 so some class has votes");
    Ok(best)
}

pub fn knn_eval(train: &LabeledReps, test: &LabeledReps, k: usize) -> Result<EvalReport> {
    let mut correct = 0usize;
    for (q, &y) in test.reps.iter().zip(&test.labels) {
        if knn_predict(train, q.as_slice(), k)? == y {
            correct += 1;
        }
    }
    Ok(EvalReport {
        protocol: Protocol::Knn,
        top1_accuracy: if test.is_empty() { 0.0 } else { correct as f64 / test.len() as f64 },
        n_test: test.len(),
        k_or_epochs: k,
    })
}

/// Multinomial logistic regression `softmax(W r + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `[n_classes][dim]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LinearProbe {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        LinearProbe {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            biases: vec![0.0; n_classes],
        }
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.biases)
            .map(|(w, b)| dot(w, x) + b)
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.logits(x);
        (0..l.len())
            .max_by(|&a, &b| l[a].total_cmp(&l[b]).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    /// Mean cross-entropy and its gradient `(loss, d_weights, d_biases)`.
    pub fn loss_and_grad(&self, data: &LabeledReps) -> (f64, Vec<f64>, Vec<f64>) {
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.biases.len()];
        let mut loss = 0.0;
        let n = data.len().max(1) as f64;
        for (r, &y) in data.reps.iter().zip(&data.labels) {
            let x = r.as_slice();
            let logits = self.logits(x);
            let lse = crate::geometry::log_sum_exp(&logits);
            loss += lse - logits[y];
            for (c, l) in logits.iter().enumerate() {
                let p = (l - lse).exp() - if c == y { 1.0 } else { 0.0 };
                gb[c] += p / n;
                gw[c * self.dim..(c + 1) * self.dim]
                    .iter_mut()
                    .zip(x)
                    .for_each(|(g, xi)| *g += p * xi / n);
            }
        }
        (loss / n, gw, gb)
    }

    /// Full-batch gradient descent from zero initialization. Returns the
    /// probe and the training loss before each epoch's step.
    pub fn fit(train: &LabeledReps, n_classes: usize, epochs: usize, lr: f64) -> Result<(Self, Vec<f64>)> {
        if epochs == 0 {
            return Err(Error::ConfigInvalid("probe epochs must be >= 1".into()));
        }
        if n_classes < 2 {
            return Err(Error::ConfigInvalid("probe needs >= 2 classes".into()));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::ConfigInvalid("probe lr must be > 0".into()));
        }
        let dim = train.reps.first().ok_or(Error::EmptyInput)?.dim();
        if train.labels.iter().any(|&y| y >= n_classes) {
            return Err(Error::ConfigInvalid("label out of range".into()));
        }
        let mut probe = LinearProbe::zeros(n_classes, dim);
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let (loss, gw, gb) = probe.loss_and_grad(train);
            history.push(loss);
            probe.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= lr * g);
            probe.biases.iter_mut().zip(&gb).for_each(|(b, g)| *b -= lr * g);
        }
        Ok((probe, history))
    }

    pub fn accuracy(&self, data: &LabeledReps) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data
            .reps
            .iter()
            .zip(&data.labels)
            .filter(|(r, &y)| self.predict(r.as_slice()) == y)
            .count();
        correct as f64 / data.len() as f64
    }
}

pub fn linear_probe(train: &LabeledReps, test: &LabeledReps, epochs: usize, lr: f64) -> Result<EvalReport> {
    let n_classes = train.n_classes().max(test.n_classes());
    let (probe, _) = LinearProbe::fit(train, n_classes, epochs, lr)?;
    Ok(EvalReport {
        protocol: Protocol::Linear,
        top1_accuracy: probe.accuracy(test),
        n_test: test.len(),
        k_or_epochs: epochs,
    })
}
