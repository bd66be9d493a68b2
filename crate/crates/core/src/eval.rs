//! DTW distance, 1NN classification, corpus-wide z-scoring and
//! confusion-matrix metrics.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dynamic time warping distance between sequences stored as `N × C`
/// matrices (rows are time steps). Local cost is the Euclidean distance
/// between rows; steps are match, insertion and deletion, and the path
/// must align both endpoints. `window` restricts `|i - j|` (Sakoe–Chiba);
/// `None` is unconstrained.
pub fn dtw(a: &DMatrix<f64>, b: &DMatrix<f64>, window: Option<usize>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "dtw needs equal channel counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (n, m) = (a.nrows(), b.nrows());
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("dtw needs nonempty sequences".into()));
    }
    // a band narrower than the length difference cannot align the ends
    let band = window.map(|w| w.max(n.abs_diff(m)));
    let inf = f64::INFINITY;
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur.fill(inf);
        let (lo, hi) = match band {
            Some(w) => (i.saturating_sub(w).max(1), (i + w).min(m)),
            None => (1, m),
        };
        for j in lo..=hi {
            let cost = (a.row(i - 1) - b.row(j - 1)).norm();
            cur[j] = cost + prev[j - 1].min(prev[j]).min(cur[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Per-column standardization statistics over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns with zero variance (or fewer than two values) that were
    /// passed through unchanged.
    pub constant: Vec<bool>,
}

/// Standardizes every column jointly across all items: subtract the
/// corpus mean, divide by the corpus (sample) standard deviation.
pub fn zscore_channels(corpus: &[DMatrix<f64>]) -> Result<(Vec<DMatrix<f64>>, ZScore)> {
    let Some(first) = corpus.first() else {
        return Ok((
            vec![],
            ZScore {
                means: vec![],
                stds: vec![],
                constant: vec![],
            },
        ));
    };
    let c = first.ncols();
    if corpus.iter().any(|m| m.ncols() != c) {
        return Err(Error::Dimension("corpus items differ in channel count".into()));
    }
    let mut means = vec![0.0; c];
    let mut stds = vec![0.0; c];
    let mut constant = vec![false; c];
    for k in 0..c {
        let values = || corpus.iter().flat_map(|m| m.column(k).iter().copied().collect::<Vec<_>>());
        let count = corpus.iter().map(|m| m.nrows()).sum::<usize>();
        if count < 2 {
            constant[k] = true;
            continue;
        }
        let mean = values().sum::<f64>() / count as f64;
        let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        means[k] = mean;
        stds[k] = var.sqrt();
        constant[k] = !(var > 0.0);
    }
    let scaled = corpus
        .iter()
        .map(|m| {
            let mut out = m.clone();
            for k in (0..c).filter(|&k| !constant[k]) {
                out.column_mut(k).apply(|v| *v = (*v - means[k]) / stds[k]);
            }
            out
        })
        .collect();
    Ok((scaled, ZScore { means, stds, constant }))
}

/// Nearest training item for one test item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub label: usize,
    pub distance: f64,
}

/// 1NN under DTW. Ties go to the lowest training index. With `scale`, train
/// and test are z-scored jointly first.
pub fn nn1_classify(
    train: &[(DMatrix<f64>, usize)],
    test: &[DMatrix<f64>],
    scale: bool,
    window: Option<usize>,
) -> Result<Vec<Neighbor>> {
    if train.is_empty() {
        return Err(Error::InvalidInput("1NN needs at least one training item".into()));
    }
    let (train_x, test_x): (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) = if scale {
        let all: Vec<DMatrix<f64>> = train.iter().map(|t| t.0.clone()).chain(test.iter().cloned()).collect();
        let (mut scaled, _) = zscore_channels(&all)?;
        let test_x = scaled.split_off(train.len());
        (scaled, test_x)
    } else {
        (train.iter().map(|t| t.0.clone()).collect(), test.to_vec())
    };
    test_x
        .par_iter()
        .map(|item| {
            let mut best: Option<Neighbor> = None;
            for (index, x) in train_x.iter().enumerate() {
                let distance = dtw(item, x, window)?;
                if best.as_ref().is_none_or(|b| distance < b.distance) {
                    best = Some(Neighbor {
                        index,
                        label: train[index].1,
                        distance,
                    });
                }
            }
            Ok(best.expect("train is nonempty"))
        })
        .collect()
}

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub labels: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
            labels,
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>, labels: Vec<String>) -> Result<Self> {
        if counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(Error::Dimension("confusion matrix must be square over its labels".into()));
        }
        Ok(ConfusionMatrix { counts, labels })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], labels: Vec<String>) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Dimension("truth and predictions differ in length".into()));
        }
        let mut cm = ConfusionMatrix::new(labels);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.labels.len();
        if truth >= k || predicted >= k {
            return Err(Error::InvalidInput(format!("label index out of range for {k} classes")));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Ratios with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// Accuracy over all classes; precision, recall and F1 for class
/// `positive`, treating every other class as negative.
pub fn metrics(cm: &ConfusionMatrix, positive: usize) -> Metrics {
    let k = cm.labels.len();
    let correct: u64 = (0..k).map(|i| cm.counts[i][i]).sum();
    let accuracy = ratio(correct, cm.total());
    if positive >= k {
        return Metrics {
            accuracy,
            precision: None,
            recall: None,
            f1: None,
        };
    }
    let tp = cm.counts[positive][positive];
    let predicted_pos: u64 = (0..k).map(|i| cm.counts[i][positive]).sum();
    let actual_pos: u64 = cm.counts[positive].iter().sum();
    let precision = ratio(tp, predicted_pos);
    let recall = ratio(tp, actual_pos);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => None,
        _ => None,
    };
    Metrics {
        accuracy,
        precision,
        recall,
        f1,
    }
}

/// Binary counts accumulated one prediction at a time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamingMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl StreamingMetrics {
    pub fn push(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
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
            accuracy: ratio(self.tp + self.tn, self.tp + self.fp + self.tn + self.fn_),
            precision,
            recall,
            f1,
        }
    }
}
