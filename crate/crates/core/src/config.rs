//! Flat JSON run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, TaskType};
use crate::train::{PreparedDataset, SplitKind, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Double,
    Single,
}

/// Every setting of a training run. Unknown keys are rejected; missing keys
/// take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data_path: String,
    /// Used in checkpoint names; defaults to the data file stem.
    pub dataset_name: Option<String>,
    pub split: SplitKind,
    pub output_dir: String,
    pub seeds: Vec<u64>,
    /// Inferred from the labels when absent.
    pub task_type: Option<TaskType>,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub init_lr: f64,
    pub max_lr: f64,
    pub final_lr: f64,
    pub depth: usize,
    pub gru_layers: usize,
    pub ffn_layers: usize,
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub gru_hidden: usize,
    pub ffn_hidden: usize,
    pub transformer_hidden: usize,
    /// Longest token sequence the attention bias covers; 0 sizes it to the dataset.
    pub max_len: usize,
    pub bias_enabled: bool,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: String::new(),
            dataset_name: None,
            split: SplitKind::Random,
            output_dir: "runs".into(),
            seeds: vec![0, 1, 2, 3, 4],
            task_type: None,
            batch_size: 50,
            epochs: 50,
            warmup_epochs: 5,
            init_lr: 1e-4,
            max_lr: 2e-3,
            final_lr: 1e-4,
            depth: 2,
            gru_layers: 3,
            ffn_layers: 2,
            layers: 6,
            heads: 16,
            hidden_dim: 128,
            gru_hidden: 128,
            ffn_hidden: 128,
            transformer_hidden: 128,
            max_len: 0,
            bias_enabled: true,
            precision: Precision::Double,
        }
    }
}

fn check<T: PartialEq + std::fmt::Debug>(out: &mut Vec<String>, name: &str, value: T, range: &[T]) {
    if !range.contains(&value) {
        out.push(format!("{name} = {value:?} is outside the usual range {range:?}"));
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Hard errors for settings that cannot run.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.precision != Precision::Double {
            return bad("only double precision is supported");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.hidden_dim == 0 || self.heads == 0 || self.hidden_dim % self.heads != 0 {
            return bad("hidden_dim must be a positive multiple of heads");
        }
        if [self.depth, self.gru_layers, self.ffn_layers, self.gru_hidden, self.transformer_hidden]
            .contains(&0)
        {
            return bad("depth, gru_layers, ffn_layers, gru_hidden and transformer_hidden must be positive");
        }
        if self.ffn_layers > 1 && self.ffn_hidden == 0 {
            return bad("ffn_hidden must be positive");
        }
        self.train_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Settings outside the ranges the method was tuned over. They run, but
    /// are reported.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        check(&mut w, "batch_size", self.batch_size, &[50, 64, 128]);
        check(&mut w, "warmup_epochs", self.warmup_epochs, &[5, 10]);
        check(&mut w, "epochs", self.epochs, &[50, 100]);
        check(&mut w, "depth", self.depth, &[2, 5]);
        check(&mut w, "gru_layers", self.gru_layers, &[3]);
        check(&mut w, "ffn_layers", self.ffn_layers, &[2, 5]);
        check(&mut w, "layers", self.layers, &[6, 12]);
        check(&mut w, "heads", self.heads, &[16, 32]);
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("gru_hidden", self.gru_hidden),
            ("ffn_hidden", self.ffn_hidden),
            ("transformer_hidden", self.transformer_hidden),
        ] {
            check(&mut w, name, v, &[128, 256, 300]);
        }
        check(&mut w, "init_lr", self.init_lr, &[1e-3, 1e-4, 1e-5]);
        check(&mut w, "max_lr", self.max_lr, &[2e-3, 2e-4, 2e-5]);
        check(&mut w, "final_lr", self.final_lr, &[1e-3, 1e-4, 1e-5]);
        w
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            init_lr: self.init_lr,
            max_lr: self.max_lr,
            final_lr: self.final_lr,
        }
    }

    pub fn model_config(&self, data: &PreparedDataset) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            gru_hidden: self.gru_hidden,
            gru_layers: self.gru_layers,
            heads: self.heads,
            layers: self.layers,
            max_len: if self.max_len == 0 { data.max_tokens() } else { self.max_len },
            transformer_hidden: self.transformer_hidden,
            ffn_hidden: self.ffn_hidden,
            ffn_layers: self.ffn_layers,
            vocab_size: data.dictionary.len(),
            num_tasks: data.num_tasks(),
            task_type: data.task_type,
            bias_enabled: self.bias_enabled,
        }
    }

    pub fn dataset_label(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| {
            Path::new(&self.data_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    pub fn checkpoint_name(&self, seed: u64) -> String {
        format!("{}-{}-{}.ckpt", self.dataset_label(), self.split, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_in_range() {
        let c = RunConfig::default();
        assert!(c.validate().is_ok());
        assert!(c.warnings().is_empty(), "{:?}", c.warnings());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig { seeds: vec![7], max_lr: 3e-3, task_type: Some(TaskType::Regression), ..Default::default() };
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"hiden_dim": 64}"#), Err(ConfigError::Json(_))));
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = RunConfig::from_json(r#"{"data_path": "data/esol.csv", "hidden_dim": 64, "heads": 4}"#).unwrap();
        assert_eq!(c.epochs, 50);
        assert_eq!(c.checkpoint_name(3), "esol-random-3.ckpt");
        assert!(c.warnings().iter().any(|w| w.starts_with("hidden_dim")));
    }

    #[test]
    fn invalid_settings() {
        let base = RunConfig::default();
        assert!(RunConfig { heads: 3, ..base.clone() }.validate().is_err());
        assert!(RunConfig { init_lr: 1e-2, ..base.clone() }.validate().is_err());
        assert!(RunConfig { warmup_epochs: 50, ..base.clone() }.validate().is_err());
        assert!(RunConfig { precision: Precision::Single, ..base.clone() }.validate().is_err());
        assert!(RunConfig { seeds: vec![], ..base }.validate().is_err());
    }
}
