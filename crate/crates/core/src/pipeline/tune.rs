use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Smallest accepted evaluation budget.
pub const MIN_TUNE_BUDGET: usize = 100;

/// One coordinate-descent step: a grid over one or two hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneStep {
    pub params: Vec<String>,
    pub grid: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunePlan {
    pub initial: ModelConfig,
    pub steps: Vec<TuneStep>,
}

impl TunePlan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: TunePlan = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        self.initial.validate()?;
        for (i, step) in self.steps.iter().enumerate() {
            let bad = |m: String| Err(Error::invalid("tune plan", format!("step {i}: {m}")));
            if !(1..=2).contains(&step.params.len()) {
                return bad(format!("{} parameters; need 1 or 2", step.params.len()));
            }
            if step.grid.len() != step.params.len()
                || step.params.iter().any(|p| !step.grid.contains_key(p))
            {
                return bad("grid keys must match params".into());
            }
            for p in &step.params {
                self.initial.get(p)?;
                if step.grid[p].is_empty() {
                    return bad(format!("empty grid for {p}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trial {
    pub step: usize,
    pub config: ModelConfig,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneOutcome {
    pub best: ModelConfig,
    pub best_score: f64,
    /// Unique evaluations in order.
    pub trials: Vec<Trial>,
    pub budget_exhausted: bool,
}

fn grid_points(step: &TuneStep) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for p in &step.params {
        points = points
            .into_iter()
            .flat_map(|prefix| {
                step.grid[p].iter().map(move |&v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    points
}

/// Coordinate-descent grid search minimising `objective` (lower is better).
///
/// Each step evaluates every grid point around the incumbent and adopts the best.
/// Exact ties keep the incumbent's values if they are on the grid, otherwise the
/// lexicographically smallest grid point. Configurations seen before are not re-run,
/// and at most `budget` unique configurations are evaluated.
pub fn tune<F>(plan: &TunePlan, budget: usize, mut objective: F) -> Result<TuneOutcome>
where
    F: FnMut(&ModelConfig) -> Result<f64>,
{
    if budget < MIN_TUNE_BUDGET {
        return Err(Error::invalid(
            "budget",
            format!("{budget}; need at least {MIN_TUNE_BUDGET}"),
        ));
    }
    plan.validate()?;
    let mut cache: BTreeMap<String, f64> = BTreeMap::new();
    let mut trials = Vec::new();
    let mut incumbent = plan.initial.clone();
    let mut incumbent_score: Option<f64> = None;
    let mut exhausted = false;

    'steps: for (s, step) in plan.steps.iter().enumerate() {
        let current: Vec<f64> = step
            .params
            .iter()
            .map(|p| incumbent.get(p))
            .collect::<Result<_>>()?;
        let mut best: Option<(Vec<f64>, ModelConfig, f64)> = None;
        for point in grid_points(step) {
            let mut cfg = incumbent.clone();
            for (p, &v) in step.params.iter().zip(&point) {
                cfg.set(p, v)?;
            }
            cfg.validate()?;
            let key = cfg.to_json();
            let score = match cache.get(&key) {
                Some(&v) => v,
                None => {
                    if cache.len() >= budget {
                        exhausted = true;
                        break;
                    }
                    let v = objective(&cfg)?;
                    if v.is_nan() {
                        return Err(Error::NonFinite(format!("objective at step {s}")));
                    }
                    info!("tune step {s}: {:?} = {:?} -> {v:.6}", step.params, point);
                    cache.insert(key, v);
                    trials.push(Trial { step: s, config: cfg.clone(), score: v });
                    v
                }
            };
            let better = match &best {
                None => true,
                Some((bp, _, bs)) => {
                    score < *bs
                        || (score == *bs && *bp != current
                            && (point == current || point.partial_cmp(bp) == Some(std::cmp::Ordering::Less)))
                }
            };
            if better {
                best = Some((point, cfg, score));
            }
        }
        if let Some((_, cfg, score)) = best {
            let keep = matches!(incumbent_score, Some(inc) if inc < score);
            if !keep {
                incumbent = cfg;
                incumbent_score = Some(score);
            }
        }
        if exhausted {
            break 'steps;
        }
    }
    let best_score = match incumbent_score {
        Some(v) => v,
        None => {
            let key = incumbent.to_json();
            match cache.get(&key) {
                Some(&v) => v,
                None => {
                    let v = objective(&incumbent)?;
                    trials.push(Trial { step: 0, config: incumbent.clone(), score: v });
                    v
                }
            }
        }
    };
    Ok(TuneOutcome {
        best: incumbent,
        best_score,
        trials,
        budget_exhausted: exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(params: &[&str], grid: &[(&str, &[f64])]) -> TuneStep {
        TuneStep {
            params: params.iter().map(|s| s.to_string()).collect(),
            grid: grid.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect(),
        }
    }

    fn quadratic(cfg: &ModelConfig) -> Result<f64> {
        Ok((cfg.learning_rate.log10() + 3.0).powi(2) + (cfg.dropout - 0.1).powi(2))
    }

    #[test]
    fn finds_grid_minimum() {
        let plan = TunePlan {
            initial: ModelConfig::baseline(),
            steps: vec![
                step(&["lr"], &[("lr", &[1e-5, 1e-4, 1e-3, 2e-3])]),
                step(&["dropout"], &[("dropout", &[0.0, 0.1, 0.2, 0.4])]),
            ],
        };
        let out = tune(&plan, 100, quadratic).unwrap();
        assert_eq!(out.best.learning_rate, 1e-3);
        assert_eq!(out.best.dropout, 0.1);
        // (lr 1e-3, dropout 0.2) is shared by both steps and evaluated once
        assert_eq!(out.trials.len(), 7);
        // The best score is never worse than any evaluated trial.
        assert!(out.trials.iter().all(|t| out.best_score <= t.score));
    }

    #[test]
    fn repeated_configs_use_the_cache() {
        let plan = TunePlan {
            initial: ModelConfig::baseline(),
            steps: vec![
                step(&["lr"], &[("lr", &[1e-4, 1e-3])]),
                step(&["lr"], &[("lr", &[1e-4, 1e-3])]),
            ],
        };
        let mut calls = 0;
        let out = tune(&plan, 100, |c| {
            calls += 1;
            quadratic(c)
        })
        .unwrap();
        assert_eq!(calls, 2);
        assert_eq!(out.trials.len(), 2);
    }

    #[test]
    fn ties_prefer_incumbent_then_smaller() {
        let plan = TunePlan {
            initial: ModelConfig::baseline(),
            steps: vec![step(&["dropout"], &[("dropout", &[0.3, 0.2, 0.1])])],
        };
        let out = tune(&plan, 100, |_| Ok(1.0)).unwrap();
        assert_eq!(out.best.dropout, 0.2);
        let plan = TunePlan {
            initial: ModelConfig::baseline(),
            steps: vec![step(&["dropout"], &[("dropout", &[0.3, 0.4, 0.1])])],
        };
        let out = tune(&plan, 100, |_| Ok(1.0)).unwrap();
        assert_eq!(out.best.dropout, 0.1);
    }

    #[test]
    fn two_parameter_grid() {
        let plan = TunePlan {
            initial: ModelConfig::baseline(),
            steps: vec![step(
                &["beta1", "beta2"],
                &[("beta1", &[0.8, 0.9]), ("beta2", &[0.95, 0.99, 0.999])],
            )],
        };
        let out = tune(&plan, 100, |c| Ok((c.beta1 - 0.8).abs() + (c.beta2 - 0.99).abs())).unwrap();
        assert_eq!((out.best.beta1, out.best.beta2), (0.8, 0.99));
        assert_eq!(out.trials.len(), 6);
    }

    #[test]
    fn budget_limits_unique_evaluations() {
        let values: Vec<f64> = (0..150).map(|i| 1000.0 + i as f64).collect();
        let plan = TunePlan {
            initial: ModelConfig::baseline(),
            steps: vec![step(&["max_patches"], &[("max_patches", &values)])],
        };
        let out = tune(&plan, 100, |c| Ok(-(c.max_patches as f64))).unwrap();
        assert_eq!(out.trials.len(), 100);
        assert!(out.budget_exhausted);
        assert_eq!(out.best.max_patches, 1099);
        assert!(tune(&plan, 99, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn malformed_plans_are_rejected() {
        let mut plan = TunePlan {
            initial: ModelConfig::baseline(),
            steps: vec![step(&["lr"], &[("dropout", &[0.1])])],
        };
        assert!(plan.validate().is_err());
        plan.steps = vec![step(&["bogus"], &[("bogus", &[0.1])])];
        assert!(plan.validate().is_err());
        plan.steps = vec![step(&["lr"], &[("lr", &[])])];
        assert!(plan.validate().is_err());
        plan.steps = vec![step(&["lr"], &[("lr", &[5.0])])];
        assert!(tune(&plan, 100, |_| Ok(0.0)).is_err());
    }
}
