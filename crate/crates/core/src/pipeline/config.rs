use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphbuild::FeatureSpaceMode;
use crate::slideio::Magnification;

fn default_max_epochs() -> usize {
    100
}

fn default_heads() -> usize {
    1
}

/// The thirteen tuned hyperparameters plus run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub max_patches: usize,
    pub message_passings: usize,
    pub graph_poolings: usize,
    pub pooling_factor: f64,
    pub embedding_size: usize,
    pub feature_space_mode: FeatureSpaceMode,
    pub magnifications: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; `3 × lr_patience` if unset.
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
    /// Only single-head attention is implemented.
    #[serde(default = "default_heads")]
    pub attention_heads: usize,
}

/// Names accepted by [`ModelConfig::get`] / [`ModelConfig::set`], in table order.
pub const HYPERPARAMETERS: [&str; 13] = [
    "learning_rate",
    "lr_decay",
    "lr_patience",
    "beta1",
    "beta2",
    "epsilon",
    "dropout",
    "weight_decay",
    "max_patches",
    "message_passings",
    "graph_poolings",
    "pooling_factor",
    "embedding_size",
];

/// Closed ranges spanned by the reference tuned values across all models.
const RANGES: [(&str, f64, f64); 13] = [
    ("learning_rate", 1e-5, 2e-3),
    ("lr_decay", 0.45, 0.9),
    ("lr_patience", 10.0, 20.0),
    ("beta1", 0.8, 0.95),
    ("beta2", 0.95, 0.99999),
    ("epsilon", 1e-7, 1e-2),
    ("dropout", 0.0, 0.4),
    ("weight_decay", 1e-3, 1e-1),
    ("max_patches", 1000.0, 14000.0),
    ("message_passings", 1.0, 3.0),
    ("graph_poolings", 1.0, 4.0),
    ("pooling_factor", 0.45, 0.9),
    ("embedding_size", 256.0, 1024.0),
];

fn canonical(name: &str) -> &str {
    match name {
        "lr" => "learning_rate",
        other => other,
    }
}

impl ModelConfig {
    /// 5x+10x graph with average-initialised concatenated features.
    pub fn baseline() -> Self {
        ModelConfig {
            learning_rate: 1e-4,
            lr_decay: 0.9,
            lr_patience: 10,
            beta1: 0.9,
            beta2: 0.9999,
            epsilon: 1e-5,
            dropout: 0.2,
            weight_decay: 1e-2,
            max_patches: 6000,
            message_passings: 3,
            graph_poolings: 4,
            pooling_factor: 0.9,
            embedding_size: 512,
            feature_space_mode: FeatureSpaceMode::ConcatAvg,
            magnifications: vec![5.0, 10.0],
            seed: 0,
            max_epochs: default_max_epochs(),
            early_stop_patience: None,
            attention_heads: 1,
        }
    }

    pub fn graph_10x() -> Self {
        ModelConfig {
            learning_rate: 5e-5,
            lr_decay: 0.9,
            lr_patience: 10,
            beta1: 0.95,
            beta2: 0.999,
            epsilon: 1e-7,
            dropout: 0.0,
            weight_decay: 1e-1,
            max_patches: 4000,
            message_passings: 1,
            graph_poolings: 1,
            pooling_factor: 0.6,
            embedding_size: 256,
            feature_space_mode: FeatureSpaceMode::Naive,
            magnifications: vec![10.0],
            ..Self::baseline()
        }
    }

    pub fn graph_10x_20x() -> Self {
        ModelConfig {
            learning_rate: 1e-4,
            lr_decay: 0.9,
            lr_patience: 20,
            beta1: 0.95,
            beta2: 0.999,
            epsilon: 1e-7,
            dropout: 0.1,
            weight_decay: 1e-2,
            max_patches: 14000,
            message_passings: 1,
            graph_poolings: 2,
            pooling_factor: 0.6,
            embedding_size: 256,
            magnifications: vec![10.0, 20.0],
            ..Self::baseline()
        }
    }

    pub fn naive_features() -> Self {
        ModelConfig {
            learning_rate: 2e-4,
            lr_decay: 0.45,
            lr_patience: 15,
            beta1: 0.9,
            beta2: 0.99999,
            epsilon: 1e-7,
            dropout: 0.2,
            weight_decay: 1e-3,
            max_patches: 4000,
            message_passings: 1,
            graph_poolings: 2,
            pooling_factor: 0.45,
            embedding_size: 256,
            feature_space_mode: FeatureSpaceMode::Naive,
            ..Self::baseline()
        }
    }

    pub fn concat_zero_features() -> Self {
        ModelConfig {
            learning_rate: 1e-4,
            lr_decay: 0.9,
            lr_patience: 15,
            beta1: 0.95,
            beta2: 0.99,
            epsilon: 1e-7,
            dropout: 0.4,
            weight_decay: 1e-2,
            max_patches: 5000,
            message_passings: 1,
            graph_poolings: 2,
            pooling_factor: 0.75,
            embedding_size: 256,
            feature_space_mode: FeatureSpaceMode::ConcatZero,
            ..Self::baseline()
        }
    }

    pub fn resnet50_features() -> Self {
        ModelConfig {
            learning_rate: 2e-3,
            lr_decay: 0.6,
            lr_patience: 20,
            beta1: 0.8,
            beta2: 0.95,
            epsilon: 1e-2,
            dropout: 0.2,
            weight_decay: 1e-3,
            max_patches: 5000,
            message_passings: 1,
            graph_poolings: 4,
            pooling_factor: 0.6,
            embedding_size: 1024,
            ..Self::baseline()
        }
    }

    pub fn early_stop(&self) -> usize {
        self.early_stop_patience.unwrap_or(3 * self.lr_patience)
    }

    pub fn mags(&self) -> Result<Vec<Magnification>> {
        let mut mags = self
            .magnifications
            .iter()
            .map(|&m| Magnification::new(m))
            .collect::<Result<Vec<_>>>()?;
        mags.sort();
        Ok(mags)
    }

    /// Value of a hyperparameter by name (`lr` is accepted for `learning_rate`).
    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(match canonical(name) {
            "learning_rate" => self.learning_rate,
            "lr_decay" => self.lr_decay,
            "lr_patience" => self.lr_patience as f64,
            "beta1" => self.beta1,
            "beta2" => self.beta2,
            "epsilon" => self.epsilon,
            "dropout" => self.dropout,
            "weight_decay" => self.weight_decay,
            "max_patches" => self.max_patches as f64,
            "message_passings" => self.message_passings as f64,
            "graph_poolings" => self.graph_poolings as f64,
            "pooling_factor" => self.pooling_factor,
            "embedding_size" => self.embedding_size as f64,
            other => return Err(Error::invalid("hyperparameter", format!("unknown '{other}'"))),
        })
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let int = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::invalid(
                    "hyperparameter",
                    format!("{name} needs a non-negative integer, got {value}"),
                ))
            }
        };
        match canonical(name) {
            "learning_rate" => self.learning_rate = value,
            "lr_decay" => self.lr_decay = value,
            "lr_patience" => self.lr_patience = int()?,
            "beta1" => self.beta1 = value,
            "beta2" => self.beta2 = value,
            "epsilon" => self.epsilon = value,
            "dropout" => self.dropout = value,
            "weight_decay" => self.weight_decay = value,
            "max_patches" => self.max_patches = int()?,
            "message_passings" => self.message_passings = int()?,
            "graph_poolings" => self.graph_poolings = int()?,
            "pooling_factor" => self.pooling_factor = value,
            "embedding_size" => self.embedding_size = int()?,
            other => return Err(Error::invalid("hyperparameter", format!("unknown '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lo, hi) in RANGES {
            let v = self.get(name)?;
            let slack = 1e-12 * hi.abs().max(1.0);
            if !(v >= lo - slack && v <= hi + slack) {
                return Err(Error::invalid(
                    "config",
                    format!("{name} = {v} outside [{lo}, {hi}]"),
                ));
            }
        }
        let mags = self.mags()?;
        match mags.as_slice() {
            [_] if !self.feature_space_mode.is_concat() => {}
            [lo, hi] if lo.is_half_of(*hi) => {}
            other => {
                return Err(Error::invalid(
                    "config",
                    format!("{} with magnifications {other:?}", self.feature_space_mode),
                ))
            }
        }
        if self.attention_heads != 1 {
            return Err(Error::invalid(
                "config",
                format!("attention_heads = {}; only 1 is supported", self.attention_heads),
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("config", "max_epochs must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::parse("config JSON", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for cfg in [
            ModelConfig::baseline(),
            ModelConfig::graph_10x(),
            ModelConfig::graph_10x_20x(),
            ModelConfig::naive_features(),
            ModelConfig::concat_zero_features(),
            ModelConfig::resnet50_features(),
        ] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let cfg = ModelConfig::baseline();
        let back = ModelConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(matches!(
            ModelConfig::from_json(&v.to_string()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let mut v: serde_json::Value = serde_json::from_str(&ModelConfig::baseline().to_json()).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.remove("max_epochs");
        obj.remove("early_stop_patience");
        obj.remove("attention_heads");
        let cfg = ModelConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(cfg.max_epochs, 100);
        assert_eq!(cfg.early_stop(), 30);
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        let mut cfg = ModelConfig::baseline();
        cfg.pooling_factor = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::baseline();
        cfg.graph_poolings = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::graph_10x();
        cfg.feature_space_mode = FeatureSpaceMode::ConcatZero;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::baseline();
        cfg.magnifications = vec![5.0, 20.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn get_set_by_name() {
        let mut cfg = ModelConfig::baseline();
        cfg.set("lr", 2e-4).unwrap();
        assert_eq!(cfg.get("learning_rate").unwrap(), 2e-4);
        cfg.set("embedding_size", 256.0).unwrap();
        assert_eq!(cfg.embedding_size, 256);
        assert!(cfg.set("embedding_size", 256.5).is_err());
        assert!(cfg.set("nope", 1.0).is_err());
        for name in HYPERPARAMETERS {
            assert!(cfg.get(name).is_ok());
        }
    }
}
