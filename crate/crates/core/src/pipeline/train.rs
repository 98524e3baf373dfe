use std::io::Write;

use log::{debug, info};
use serde::Serialize;

use super::config::ModelConfig;
use super::data::Slide;
use super::folds::{make_folds, FoldSplit};
use crate::error::{Error, Result};
use crate::gnn::{init_model, PatchGraphModel};
use crate::graphbuild::{assemble_graph, subsample_patches, MultiResGraph};
use crate::numkit::{adam_step, log_softmax_at, AdamState, Rng};
use crate::slideio::NUM_CLASSES;

/// Draws a class uniformly, then a slide of that class uniformly.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    by_class: Vec<Vec<usize>>,
}

impl BalancedSampler {
    /// `labels[i]` is the class of item `i`. Every class must be present.
    pub fn new(labels: &[usize]) -> Result<Self> {
        let mut by_class = vec![Vec::new(); NUM_CLASSES];
        for (i, &l) in labels.iter().enumerate() {
            if l >= NUM_CLASSES {
                return Err(Error::invalid("label", format!("{l} at position {i}")));
            }
            by_class[l].push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::invalid("sampler", format!("no training slide of class {c}")));
        }
        Ok(BalancedSampler { by_class })
    }

    pub fn next(&self, rng: &mut Rng) -> usize {
        let members = &self.by_class[rng.below(NUM_CLASSES)];
        members[rng.below(members.len())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stalled,
    Stop,
}

/// Reduce-on-plateau learning rate with early stopping.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub lr: f64,
    decay: f64,
    lr_patience: usize,
    stop_patience: usize,
    best: f64,
    since_best: usize,
    since_decay: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, decay: f64, lr_patience: usize, stop_patience: usize) -> Self {
        PlateauSchedule {
            lr,
            decay,
            lr_patience,
            stop_patience,
            best: f64::INFINITY,
            since_best: 0,
            since_decay: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch's validation loss. A strictly lower loss is an improvement;
    /// every `lr_patience` consecutive epochs without one multiply the rate by `decay`.
    pub fn observe(&mut self, val: f64) -> Verdict {
        if val < self.best {
            self.best = val;
            self.since_best = 0;
            self.since_decay = 0;
            return Verdict::Improved;
        }
        self.since_best += 1;
        self.since_decay += 1;
        if self.since_decay == self.lr_patience {
            self.lr *= self.decay;
            self.since_decay = 0;
        }
        if self.since_best >= self.stop_patience {
            Verdict::Stop
        } else {
            Verdict::Stalled
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_balanced_ce: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

pub fn write_epoch_log(log: &[EpochLog], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_balanced_ce,lr")?;
    for e in log {
        writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_balanced_ce, e.lr)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: PatchGraphModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_ce: f64,
}

/// Mean over classes present in `slides` of the per-class mean cross-entropy.
pub fn balanced_cross_entropy(model: &PatchGraphModel, slides: &[&Slide], graphs: &[MultiResGraph]) -> Result<f64> {
    let mut sums = [0.0; NUM_CLASSES];
    let mut counts = [0usize; NUM_CLASSES];
    for (slide, graph) in slides.iter().zip(graphs) {
        let logits = model.logits(graph)?;
        sums[slide.label] -= log_softmax_at(&logits, slide.label);
        counts[slide.label] += 1;
    }
    let present: Vec<f64> = (0..NUM_CLASSES)
        .filter(|&c| counts[c] > 0)
        .map(|c| sums[c] / counts[c] as f64)
        .collect();
    if present.is_empty() {
        return Err(Error::invalid("validation", "no slides"));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Full (unsubsampled) graph of each slide.
pub fn slide_graphs(slides: &[&Slide], config: &ModelConfig) -> Result<Vec<MultiResGraph>> {
    slides
        .iter()
        .map(|s| assemble_graph(&s.features, config.feature_space_mode))
        .collect()
}

/// Trains one model. `tag` names the RNG substreams (`{tag}/init`, `{tag}/sampler`,
/// `{tag}/subsample`, `{tag}/dropout`), so runs are reproducible from `config.seed`.
pub fn train_model(train: &[&Slide], val: &[&Slide], config: &ModelConfig, tag: &str) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training", "empty training or validation set"));
    }
    let dim = train[0].feature_dim();
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    let sampler = BalancedSampler::new(&labels)?;

    let stream = |name: &str| Rng::substream(config.seed, &format!("{tag}/{name}"));
    let mut init_rng = stream("init");
    let mut sampler_rng = stream("sampler");
    let mut subsample_rng = stream("subsample");
    let mut dropout_rng = stream("dropout");

    let mut model = init_model(config, dim, &mut init_rng)?;
    let mut adam = AdamState::new(
        model.params().tensors(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
        config.weight_decay,
    )?;
    let mut schedule = PlateauSchedule::new(
        config.learning_rate,
        config.lr_decay,
        config.lr_patience,
        config.early_stop(),
    );
    let train_graphs = slide_graphs(train, config)?;
    let val_graphs = slide_graphs(val, config)?;

    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut log = Vec::new();
    for epoch in 1..=config.max_epochs {
        adam.learning_rate = schedule.lr;
        let mut total = 0.0;
        for step in 0..train.len() {
            let i = sampler.next(&mut sampler_rng);
            let slide = train[i];
            let patches: usize = slide.features.iter().map(|f| f.len()).sum();
            let sub;
            let graph = if patches > config.max_patches {
                let sets = subsample_patches(&slide.features, config.max_patches, &mut subsample_rng)?;
                sub = assemble_graph(&sets, config.feature_space_mode)?;
                &sub
            } else {
                &train_graphs[i]
            };
            let (loss, grads) = model.loss_and_grads(graph, slide.label, Some(&mut dropout_rng))?;
            if !loss.is_finite() || grads.iter().any(|(_, g)| !g.all_finite()) {
                return Err(Error::Diverged(format!(
                    "{tag}: epoch {epoch} step {step} slide {}: loss {loss}",
                    slide.slide_id
                )));
            }
            adam_step(model.params_mut().tensors_mut(), &grads, &mut adam)?;
            total += loss;
        }
        let train_loss = total / train.len() as f64;
        let val_ce = balanced_cross_entropy(&model, val, &val_graphs)?;
        if !val_ce.is_finite() {
            return Err(Error::Diverged(format!("{tag}: epoch {epoch}: validation loss {val_ce}")));
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_balanced_ce: val_ce,
            lr: schedule.lr,
        });
        debug!("{tag} epoch {epoch}: train {train_loss:.4} val {val_ce:.4} lr {:.2e}", schedule.lr);
        match schedule.observe(val_ce) {
            Verdict::Improved => {
                best = model.clone();
                best_epoch = epoch;
            }
            Verdict::Stalled => {}
            Verdict::Stop => break,
        }
    }
    info!("{tag}: best epoch {best_epoch}, validation CE {:.4}", schedule.best());
    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch,
        best_val_ce: schedule.best(),
    })
}

pub fn train_fold(fold: &FoldSplit, slides: &[Slide], config: &ModelConfig) -> Result<TrainOutcome> {
    let train: Vec<&Slide> = fold.train_indices(slides).into_iter().map(|i| &slides[i]).collect();
    let val: Vec<&Slide> = fold.val_indices(slides).into_iter().map(|i| &slides[i]).collect();
    train_model(&train, &val, config, &format!("fold{}", fold.fold_id))
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub split: FoldSplit,
    pub outcome: TrainOutcome,
}

/// Stratified `k`-fold cross-validation; one model per fold.
pub fn cross_validate(slides: &[Slide], config: &ModelConfig, k: usize) -> Result<Vec<FoldResult>> {
    let splits = make_folds(slides, k, config.seed)?;
    splits
        .into_iter()
        .map(|split| {
            let outcome = train_fold(&split, slides, config)?;
            Ok(FoldResult { split, outcome })
        })
        .collect()
}

pub fn mean_best_val_ce(folds: &[FoldResult]) -> f64 {
    folds.iter().map(|f| f.outcome.best_val_ce).sum::<f64>() / folds.len() as f64
}

/// Averages the class probabilities of the fold models.
#[derive(Debug, Clone)]
pub struct Ensemble {
    models: Vec<PatchGraphModel>,
}

impl Ensemble {
    pub fn new(models: Vec<PatchGraphModel>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::invalid("ensemble", "no models"))?;
        if let Some(i) = models.iter().position(|m| m.architecture() != first.architecture()) {
            return Err(Error::invalid("ensemble", format!("model {i} has a different architecture")));
        }
        Ok(Ensemble { models })
    }

    pub fn models(&self) -> &[PatchGraphModel] {
        &self.models
    }

    pub fn predict_proba(&self, graph: &MultiResGraph) -> Result<Vec<f64>> {
        let each = self
            .models
            .iter()
            .map(|m| m.predict_proba(graph))
            .collect::<Result<Vec<_>>>()?;
        Ok(average_probabilities(&each))
    }
}

pub fn average_probabilities(each: &[Vec<f64>]) -> Vec<f64> {
    let mut mean = vec![0.0; NUM_CLASSES];
    for p in each {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let n = each.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}
