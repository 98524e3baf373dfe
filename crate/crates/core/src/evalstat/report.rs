use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci, Interval};
use super::metrics::{confusion_matrix, Metric, PredictionSet};
use super::stats::{bh_adjust, paired_t_test, Degenerate};
use crate::error::{Error, Result};
use crate::gnn::PatchGraphModel;
use crate::pipeline::{average_probabilities, slide_graphs, Ensemble, ModelConfig, Slide};
use crate::slideio::NUM_CLASSES;

/// One value per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricTable<T> {
    pub balanced_accuracy: T,
    pub auroc: T,
    pub f1: T,
}

impl<T> MetricTable<T> {
    pub fn get(&self, m: Metric) -> &T {
        match m {
            Metric::BalancedAccuracy => &self.balanced_accuracy,
            Metric::Auroc => &self.auroc,
            Metric::F1 => &self.f1,
        }
    }

    pub fn try_build(mut f: impl FnMut(Metric) -> Result<T>) -> Result<Self> {
        Ok(MetricTable {
            balanced_accuracy: f(Metric::BalancedAccuracy)?,
            auroc: f(Metric::Auroc)?,
            f1: f(Metric::F1)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    /// Ensemble metrics: bootstrap mean and 95% percentile interval.
    pub metrics: MetricTable<Interval>,
    /// Each fold model's metric on the evaluation set, in fold order.
    pub per_fold: MetricTable<Vec<f64>>,
    /// `confusion[true][predicted]` of the ensemble.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub bootstrap_iters: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(context, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub ensemble: PredictionSet,
    pub per_fold: Vec<PredictionSet>,
}

fn prediction_set(slides: &[Slide], probs: Vec<Vec<f64>>) -> Result<PredictionSet> {
    let rows = probs
        .into_iter()
        .map(|p| {
            <[f64; NUM_CLASSES]>::try_from(p.as_slice())
                .map_err(|_| Error::shape("predictions", format!("{} classes", p.len())))
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(
        slides.iter().map(|s| s.slide_id.clone()).collect(),
        slides.iter().map(|s| s.label).collect(),
        rows,
    )
}

/// Evaluates the fold ensemble on full (unsubsampled) slide graphs. Slides are taken in
/// `slide_id` order, so the report does not depend on manifest order.
pub fn evaluate(
    slides: &[Slide],
    ensemble: &Ensemble,
    config: &ModelConfig,
    iters: usize,
    seed: u64,
) -> Result<Evaluation> {
    let mut ordered: Vec<Slide> = slides.to_vec();
    ordered.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));
    if let Some(w) = ordered.windows(2).find(|w| w[0].slide_id == w[1].slide_id) {
        return Err(Error::DuplicateKey {
            context: "evaluation slides".into(),
            key: w[0].slide_id.clone(),
        });
    }
    let slides = ordered.as_slice();
    let refs: Vec<&Slide> = slides.iter().collect();
    let graphs = slide_graphs(&refs, config)?;
    let fold_probs: Vec<Vec<Vec<f64>>> = ensemble
        .models()
        .iter()
        .map(|m: &PatchGraphModel| graphs.iter().map(|g| m.predict_proba(g)).collect())
        .collect::<Result<_>>()?;
    let mean_probs: Vec<Vec<f64>> = (0..slides.len())
        .map(|i| {
            let each: Vec<Vec<f64>> = fold_probs.iter().map(|f| f[i].clone()).collect();
            average_probabilities(&each)
        })
        .collect();
    let ens = prediction_set(slides, mean_probs)?;
    let per_fold = fold_probs
        .into_iter()
        .map(|p| prediction_set(slides, p))
        .collect::<Result<Vec<_>>>()?;

    let metrics = MetricTable::try_build(|m| {
        Ok(bootstrap_ci(&ens, |p| m.compute(p), iters, seed)?.interval)
    })?;
    let per_fold_values = MetricTable::try_build(|m| per_fold.iter().map(|p| m.compute(p)).collect())?;
    let report = EvalReport {
        metrics,
        per_fold: per_fold_values,
        confusion: confusion_matrix(&ens.labels, &ens.predictions()),
        bootstrap_iters: iters,
        seed,
    };
    Ok(Evaluation { report, ensemble: ens, per_fold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model: String,
    pub metric: Metric,
    pub t: Option<f64>,
    pub df: usize,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub degenerate: Option<Degenerate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub baseline: String,
    pub adjust: String,
    pub comparisons: Vec<Comparison>,
}

/// Paired t-tests of each model's per-fold values against the baseline's, per metric,
/// with Benjamini–Hochberg adjustment across the models of each metric.
pub fn compare(baseline: (&str, &EvalReport), others: &[(String, EvalReport)]) -> Result<StatsTable> {
    if others.is_empty() {
        return Err(Error::invalid("compare", "no reports to compare against the baseline"));
    }
    let mut comparisons = Vec::new();
    for metric in Metric::ALL {
        let base = baseline.1.per_fold.get(metric);
        let tests = others
            .iter()
            .map(|(_, r)| paired_t_test(r.per_fold.get(metric), base))
            .collect::<Result<Vec<_>>>()?;
        let raw: Vec<f64> = tests.iter().map(|t| t.p_value).collect();
        let adjusted = bh_adjust(&raw)?;
        for (((name, _), t), adj) in others.iter().zip(tests).zip(adjusted) {
            comparisons.push(Comparison {
                model: name.clone(),
                metric,
                t: t.t,
                df: t.df,
                p_value: t.p_value,
                p_adjusted: adj,
                degenerate: t.degenerate,
            });
        }
    }
    Ok(StatsTable {
        baseline: baseline.0.to_string(),
        adjust: "bh".into(),
        comparisons,
    })
}
