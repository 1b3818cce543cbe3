//! Graph and sequence encoders fused into one property predictor.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bmc::{bmc_forward_batch, BmcConfig, BmcError, BmcParams, BmcTrace, GraphBatch};
use crate::chem::{parse, ChemError, MolGraph, TokenDictionary, UnknownPolicy};
use crate::diff::{grad_check, DiffError, GradCheckOptions, GradCheckReport, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use crate::featurize::{featurize, GraphFeatures};
use crate::seq::{encode, BiasProjection, SeqBatch, SeqConfig, SeqError, SeqParams, SeqTrace};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot parse molecule: {0}")]
    Parse(#[from] ChemError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Bmc(#[from] BmcError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("every label in the batch is masked")]
    AllMasked,
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Graph hidden size; also the Transformer model dimension.
    pub hidden_dim: usize,
    pub depth: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub transformer_hidden: usize,
    pub ffn_hidden: usize,
    /// Linear layers in the prediction head, output layer included.
    pub ffn_layers: usize,
    pub vocab_size: usize,
    pub num_tasks: usize,
    pub task_type: TaskType,
    pub bias_enabled: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_tasks == 0 {
            return Err(ModelError::InvalidConfig("num_tasks must be at least 1".into()));
        }
        if self.ffn_layers == 0 {
            return Err(ModelError::InvalidConfig("ffn_layers must be at least 1".into()));
        }
        if self.ffn_hidden == 0 && self.ffn_layers > 1 {
            return Err(ModelError::InvalidConfig("ffn_hidden must be positive".into()));
        }
        BmcConfig::new(self.hidden_dim, self.depth)?;
        self.seq_config().validate()?;
        Ok(())
    }

    pub fn seq_config(&self) -> SeqConfig {
        SeqConfig {
            vocab_size: self.vocab_size,
            gru_hidden: self.gru_hidden,
            gru_layers: self.gru_layers,
            model_dim: self.hidden_dim,
            heads: self.heads,
            layers: self.layers,
            max_len: self.max_len,
            ffn_dim: self.transformer_hidden,
        }
    }
}

/// Per-task mean/std used to standardize regression targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetScaler {
    /// Statistics over unmasked entries; a task with zero spread keeps std 1.
    pub fn fit(labels: &Tensor, mask: &Tensor, rows: &[usize]) -> Self {
        let tasks = labels.cols();
        let mut mean = vec![0.0; tasks];
        let mut std = vec![1.0; tasks];
        for t in 0..tasks {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|&&r| mask.get(r, t) != 0.0)
                .map(|&r| labels.get(r, t))
                .collect();
            if vals.is_empty() {
                continue;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            mean[t] = m;
            if var > 0.0 {
                std[t] = var.sqrt();
            }
        }
        Self { mean, std }
    }

    pub fn transform(&self, task: usize, value: f64) -> f64 {
        (value - self.mean[task]) / self.std[task]
    }

    pub fn inverse(&self, task: usize, value: f64) -> f64 {
        value * self.std[task] + self.mean[task]
    }
}

/// A parsed molecule with its graph features and token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedMolecule {
    pub graph: MolGraph,
    pub features: GraphFeatures,
    pub tokens: Vec<u32>,
}

impl PreparedMolecule {
    pub fn new(smiles: &str, dictionary: &TokenDictionary) -> Result<Self, ModelError> {
        let smiles = smiles.trim();
        let graph = parse(smiles)?;
        let features = featurize(&graph);
        let tokens = dictionary.encode(smiles, UnknownPolicy::Substitute)?.ids;
        Ok(Self { graph, features, tokens })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolBatch {
    pub graph: GraphBatch,
    pub seq: SeqBatch,
}

impl MolBatch {
    pub fn new(molecules: &[&PreparedMolecule], config: &ModelConfig) -> Result<Self, ModelError> {
        if molecules.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let items: Vec<(&MolGraph, &GraphFeatures)> = molecules.iter().map(|m| (&m.graph, &m.features)).collect();
        let seqs: Vec<&[u32]> = molecules.iter().map(|m| m.tokens.as_slice()).collect();
        Ok(Self {
            graph: GraphBatch::new(&items),
            seq: SeqBatch::new(&seqs, config.vocab_size, config.max_len)?,
        })
    }

    pub fn len(&self) -> usize {
        self.graph.num_molecules()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Raw head outputs (`batch x tasks`): logits or standardized values.
    pub outputs: Var,
    /// `H_S + H_V`.
    pub fused: Var,
    pub bias: Option<Var>,
    pub graph: BmcTrace,
    pub seq: SeqTrace,
}

/// Raw per-task outputs of one molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmsgModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub bmc: BmcParams,
    pub seq: SeqParams,
    pub bias: BiasProjection,
    pub head_hidden: Vec<Linear>,
    pub head_out: Linear,
    pub scaler: Option<TargetScaler>,
}

impl MmsgModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bmc = BmcParams::new(&mut store, "bmc", BmcConfig::new(config.hidden_dim, config.depth)?, &mut rng);
        let seq = SeqParams::new(&mut store, "seq", config.seq_config(), &mut rng)?;
        let bias = BiasProjection::new(&mut store, "attn_bias", config.hidden_dim, config.heads, config.max_len, &mut rng);
        let mut head_hidden = Vec::with_capacity(config.ffn_layers - 1);
        let mut width = config.hidden_dim;
        for l in 0..config.ffn_layers - 1 {
            head_hidden.push(Linear::new(&mut store, &format!("head.hidden{l}"), width, config.ffn_hidden, true, &mut rng));
            width = config.ffn_hidden;
        }
        let head_out = Linear::new(&mut store, "head.out", width, config.num_tasks, true, &mut rng);
        Ok(Self { config, store, bmc, seq, bias, head_hidden, head_out, scaler: None })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    pub fn bias_param_ids(&self) -> Vec<ParamId> {
        self.bias.linear.params()
    }

    pub fn forward(&self, tape: &mut Tape, batch: &MolBatch) -> Result<ForwardOutput, ModelError> {
        self.forward_with(tape, &self.store, batch)
    }

    /// Forward pass reading parameter values from `store`, which must have
    /// the layout of `self.store`.
    pub fn forward_with(&self, tape: &mut Tape, store: &ParamStore, batch: &MolBatch) -> Result<ForwardOutput, ModelError> {
        let graph = bmc_forward_batch(tape, store, &self.bmc, &batch.graph)?;
        let bias = if self.config.bias_enabled {
            Some(self.bias.forward(tape, store, graph.h_e)?)
        } else {
            None
        };
        let seq = encode(tape, store, &self.seq, &batch.seq, bias)?;
        let fused = tape.add(seq.pooled, graph.h_v)?;
        let mut h = fused;
        for layer in &self.head_hidden {
            let z = layer.forward(tape, store, h)?;
            h = tape.relu(z);
        }
        let outputs = self.head_out.forward(tape, store, h)?;
        Ok(ForwardOutput { outputs, fused, bias, graph, seq })
    }

    /// Training loss over the unmasked entries: mean BCE-with-logits for
    /// classification, mean squared error for regression.
    pub fn loss(&self, tape: &mut Tape, outputs: Var, targets: &Tensor, mask: &Tensor) -> Result<Var, ModelError> {
        let active = mask.data().iter().filter(|&&m| m != 0.0).count();
        if active == 0 {
            return Err(ModelError::AllMasked);
        }
        let denom = active as f64;
        Ok(match self.config.task_type {
            TaskType::Classification => tape.bce_with_logits(outputs, targets, mask, denom)?,
            TaskType::Regression => tape.squared_error(outputs, targets, mask, denom)?,
        })
    }

    /// Head outputs for a batch, one row per molecule, with regression values
    /// mapped back to label units.
    pub fn predict_batch(&self, molecules: &[&PreparedMolecule]) -> Result<Vec<Prediction>, ModelError> {
        let batch = MolBatch::new(molecules, &self.config)?;
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &batch)?;
        let values = tape.value(out.outputs);
        Ok((0..values.rows())
            .map(|r| Prediction {
                values: values
                    .row(r)
                    .iter()
                    .enumerate()
                    .map(|(t, &v)| match (&self.scaler, self.config.task_type) {
                        (Some(s), TaskType::Regression) => s.inverse(t, v),
                        _ => v,
                    })
                    .collect(),
            })
            .collect())
    }

    pub fn predict(&self, molecule: &PreparedMolecule) -> Result<Prediction, ModelError> {
        Ok(self.predict_batch(&[molecule])?.remove(0))
    }

    /// Central-difference check of the training-loss gradient with respect
    /// to every parameter, on one batch.
    pub fn grad_check(
        &mut self,
        molecules: &[&PreparedMolecule],
        targets: &Tensor,
        mask: &Tensor,
        options: GradCheckOptions,
    ) -> Result<GradCheckReport, ModelError> {
        let batch = MolBatch::new(molecules, &self.config)?;
        {
            // Surface batch and label errors before the closure, which can
            // only report autodiff errors.
            let mut tape = Tape::new();
            let out = self.forward(&mut tape, &batch)?;
            self.loss(&mut tape, out.outputs, targets, mask)?;
        }
        let ids = self.param_ids();
        let mut store = std::mem::take(&mut self.store);
        let model = &*self;
        let result = grad_check(&mut store, &ids, options, |s, tape| {
            let out = model.forward_with(tape, s, &batch).map_err(into_diff)?;
            model.loss(tape, out.outputs, targets, mask).map_err(into_diff)
        });
        self.store = store;
        Ok(result?)
    }

    /// The fused pre-head vector `H_S + H_V`.
    pub fn export_embedding(&self, molecule: &PreparedMolecule) -> Result<Vec<f64>, ModelError> {
        let batch = MolBatch::new(&[molecule], &self.config)?;
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &batch)?;
        Ok(tape.value(out.fused).data().to_vec())
    }
}

fn into_diff(e: ModelError) -> DiffError {
    match e {
        ModelError::Diff(d) | ModelError::Seq(SeqError::Diff(d)) => d,
        other => panic!("validated batch failed during gradient check: {other}"),
    }
}

/// Mean binary cross-entropy with logits over unmasked entries.
pub fn masked_bce_loss(logits: &[f64], labels: &[f64], mask: &[bool]) -> Result<f64, ModelError> {
    if logits.len() != labels.len() || logits.len() != mask.len() {
        return Err(ModelError::Diff(DiffError::ShapeMismatch {
            op: "masked_bce_loss",
            left: [logits.len(), 1],
            right: [labels.len(), mask.len()],
        }));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((&x, &y), &m) in logits.iter().zip(labels).zip(mask) {
        if m {
            total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
            count += 1;
        }
    }
    if count == 0 {
        return Err(ModelError::AllMasked);
    }
    Ok(total / count as f64)
}

pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64, ModelError> {
    if preds.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if preds.len() != targets.len() {
        return Err(ModelError::Diff(DiffError::ShapeMismatch {
            op: "mse_loss",
            left: [preds.len(), 1],
            right: [targets.len(), 1],
        }));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64, ModelError> {
    mse_loss(preds, targets).map(f64::sqrt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Self-describing model file: config, dictionary, scaler and every parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub dictionary: TokenDictionary,
    pub scaler: Option<TargetScaler>,
    pub task_names: Vec<String>,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &MmsgModel, dictionary: &TokenDictionary, task_names: &[String]) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            dictionary: dictionary.clone(),
            scaler: model.scaler.clone(),
            task_names: task_names.to_vec(),
            params: model
                .store
                .iter()
                .map(|(_, p)| NamedTensor {
                    name: p.name.clone(),
                    shape: p.value.shape(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<(MmsgModel, TokenDictionary, Vec<String>), ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.dictionary.len() != self.model.vocab_size {
            return Err(ModelError::Checkpoint("dictionary size differs from vocab_size".into()));
        }
        let mut model = MmsgModel::new(self.model, 0)?;
        if self.params.len() != model.store.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.store.len(),
                self.params.len()
            )));
        }
        for nt in self.params {
            let id = model
                .store
                .find(&nt.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter {}", nt.name)))?;
            if model.store.value(id).shape() != nt.shape {
                return Err(ModelError::Checkpoint(format!("shape mismatch for {}", nt.name)));
            }
            *model.store.value_mut(id) = Tensor::new(nt.shape[0], nt.shape[1], nt.values)?;
        }
        model.scaler = self.scaler;
        Ok((model, self.dictionary, self.task_names))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string(self).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}
