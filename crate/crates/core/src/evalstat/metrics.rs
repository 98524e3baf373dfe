use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slideio::NUM_CLASSES;

/// Slide-level predictions: true labels and an `N × 5` probability matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub slide_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub probs: Vec<[f64; NUM_CLASSES]>,
}

impl PredictionSet {
    pub fn new(slide_ids: Vec<String>, labels: Vec<usize>, probs: Vec<[f64; NUM_CLASSES]>) -> Result<Self> {
        if slide_ids.len() != labels.len() || labels.len() != probs.len() {
            return Err(Error::shape(
                "PredictionSet",
                format!("{} ids, {} labels, {} rows", slide_ids.len(), labels.len(), probs.len()),
            ));
        }
        for (i, (&l, p)) in labels.iter().zip(&probs).enumerate() {
            if l >= NUM_CLASSES {
                return Err(Error::invalid("label", format!("{l} at row {i}")));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 || p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("probabilities", format!("row {i} sums to {s}")));
            }
        }
        Ok(PredictionSet { slide_ids, labels, probs })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows at `indices` (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> PredictionSet {
        PredictionSet {
            slide_ids: indices.iter().map(|&i| self.slide_ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            probs: indices.iter().map(|&i| self.probs[i]).collect(),
        }
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.probs.iter().map(|p| argmax(p)).collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    (1..p.len()).fold(0, |best, k| if p[k] > p[best] { k } else { best })
}

/// `m[true][predicted]`.
pub fn confusion_matrix(labels: &[usize], predicted: &[usize]) -> [[usize; NUM_CLASSES]; NUM_CLASSES] {
    let mut m = [[0; NUM_CLASSES]; NUM_CLASSES];
    for (&t, &p) in labels.iter().zip(predicted) {
        m[t][p] += 1;
    }
    m
}

fn require_all_classes(labels: &[usize], metric: &str) -> Result<[usize; NUM_CLASSES]> {
    let mut support = [0usize; NUM_CLASSES];
    for &l in labels {
        support[l] += 1;
    }
    if let Some(c) = support.iter().position(|&n| n == 0) {
        return Err(Error::UndefinedMetric(format!("{metric}: class {c} absent")));
    }
    Ok(support)
}

/// Unweighted mean of per-class recall under argmax prediction.
pub fn balanced_accuracy(preds: &PredictionSet) -> Result<f64> {
    let support = require_all_classes(&preds.labels, "balanced accuracy")?;
    let m = confusion_matrix(&preds.labels, &preds.predictions());
    Ok((0..NUM_CLASSES)
        .map(|c| m[c][c] as f64 / support[c] as f64)
        .sum::<f64>()
        / NUM_CLASSES as f64)
}

/// Unweighted mean of per-class F1; a class never predicted and never true scores 0.
pub fn macro_f1(preds: &PredictionSet) -> Result<f64> {
    require_all_classes(&preds.labels, "F1")?;
    let m = confusion_matrix(&preds.labels, &preds.predictions());
    let mut total = 0.0;
    for c in 0..NUM_CLASSES {
        let tp = m[c][c] as f64;
        let fn_: f64 = (0..NUM_CLASSES).filter(|&k| k != c).map(|k| m[c][k] as f64).sum();
        let fp: f64 = (0..NUM_CLASSES).filter(|&k| k != c).map(|k| m[k][c] as f64).sum();
        let denom = 2.0 * tp + fp + fn_;
        if denom > 0.0 {
            total += 2.0 * tp / denom;
        }
    }
    Ok(total / NUM_CLASSES as f64)
}

/// Mann–Whitney AUROC from midranks; ties contribute half.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC with {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Unweighted mean over classes of one-vs-rest AUROC.
pub fn macro_auroc(preds: &PredictionSet) -> Result<f64> {
    let mut total = 0.0;
    for c in 0..NUM_CLASSES {
        let scores: Vec<f64> = preds.probs.iter().map(|p| p[c]).collect();
        let positive: Vec<bool> = preds.labels.iter().map(|&l| l == c).collect();
        total += binary_auroc(&scores, &positive)
            .map_err(|e| Error::UndefinedMetric(format!("class {c}: {e}")))?;
    }
    Ok(total / NUM_CLASSES as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BalancedAccuracy,
    Auroc,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::BalancedAccuracy, Metric::Auroc, Metric::F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::Auroc => "auroc",
            Metric::F1 => "f1",
        }
    }

    pub fn compute(self, preds: &PredictionSet) -> Result<f64> {
        match self {
            Metric::BalancedAccuracy => balanced_accuracy(preds),
            Metric::Auroc => macro_auroc(preds),
            Metric::F1 => macro_f1(preds),
        }
    }
}
