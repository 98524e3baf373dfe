use log::debug;
use serde::{Deserialize, Serialize};

use super::metrics::PredictionSet;
use crate::error::{Error, Result};
use crate::numkit::Rng;

/// Bootstrap mean with a percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapResult {
    pub interval: Interval,
    /// Resamples discarded because the metric was undefined on them.
    pub redraws: usize,
}

/// Percentile of sorted values with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean computed as an offset from the first value, so a constant sequence returns
/// that constant exactly.
fn stable_mean(values: &[f64]) -> f64 {
    let base = values[0];
    base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
}

/// Uniform resample with replacement of `n` indices.
pub fn uniform_resample(rng: &mut Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(n)).collect()
}

/// 95% percentile bootstrap of `metric` over slides.
///
/// Iteration `i` draws from its own stream `Rng::indexed(seed, "bootstrap", i)`, so
/// results do not depend on evaluation order. Undefined resamples are redrawn from the
/// same stream until `iters` valid values exist.
pub fn bootstrap_ci<M>(preds: &PredictionSet, metric: M, iters: usize, seed: u64) -> Result<BootstrapResult>
where
    M: Fn(&PredictionSet) -> Result<f64>,
{
    bootstrap_ci_with(preds, metric, iters, seed, uniform_resample)
}

/// [`bootstrap_ci`] with a custom resampler `(stream, n) -> indices`.
pub fn bootstrap_ci_with<M, R>(
    preds: &PredictionSet,
    metric: M,
    iters: usize,
    seed: u64,
    mut resample: R,
) -> Result<BootstrapResult>
where
    M: Fn(&PredictionSet) -> Result<f64>,
    R: FnMut(&mut Rng, usize) -> Vec<usize>,
{
    if iters == 0 {
        return Err(Error::invalid("bootstrap", "need at least one iteration"));
    }
    if preds.is_empty() {
        return Err(Error::invalid("bootstrap", "no predictions"));
    }
    let n = preds.len();
    let mut values = Vec::with_capacity(iters);
    let mut redraws = 0usize;
    for i in 0..iters {
        let mut rng = Rng::indexed(seed, "bootstrap", i as u64);
        loop {
            match metric(&preds.select(&resample(&mut rng, n))) {
                Ok(v) => {
                    values.push(v);
                    break;
                }
                Err(Error::UndefinedMetric(_)) => {
                    redraws += 1;
                    if redraws > iters {
                        return Err(Error::UndefinedMetric(format!(
                            "metric undefined in more than half of {} bootstrap draws",
                            redraws + values.len()
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    if 2 * redraws > redraws + iters {
        return Err(Error::UndefinedMetric(format!(
            "metric undefined in {redraws} of {} bootstrap draws",
            redraws + iters
        )));
    }
    debug!("bootstrap: {iters} iterations, {redraws} redraws");
    let mean = stable_mean(&values);
    values.sort_by(f64::total_cmp);
    let interval = Interval {
        mean,
        ci_low: percentile(&values, 0.025).min(mean),
        ci_high: percentile(&values, 0.975).max(mean),
    };
    Ok(BootstrapResult { interval, redraws })
}
