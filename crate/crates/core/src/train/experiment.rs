use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{higher_is_better, mean_std, metric_name, task_metric};
use super::optim::Adam;
use super::schedule::NoamSchedule;
use super::split::{random_split, scaffold_split, SplitAssignment, SplitKind, SplitRatios};
use super::TrainError;
use crate::chem::{murcko_scaffold, TokenDictionary};
use crate::config::RunConfig;
use crate::data::DatasetTable;
use crate::diff::{Tape, Tensor};
use crate::model::{MmsgModel, ModelConfig, MolBatch, PreparedMolecule, TargetScaler, TaskType};

/// Optimizer and schedule settings for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub init_lr: f64,
    pub max_lr: f64,
    pub final_lr: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::InvalidConfig("batch_size and epochs must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(TrainError::InvalidConfig("warmup_epochs must be below epochs".into()));
        }
        NoamSchedule::from_epochs(self.init_lr, self.max_lr, self.final_lr, self.warmup_epochs, self.epochs, 1)?;
        Ok(())
    }
}

/// A dataset with every molecule parsed, featurized and tokenized once.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub molecules: Vec<PreparedMolecule>,
    pub smiles: Vec<String>,
    pub labels: Tensor,
    pub mask: Tensor,
    pub task_names: Vec<String>,
    pub task_type: TaskType,
    pub dictionary: TokenDictionary,
}

impl PreparedDataset {
    pub fn new(table: &DatasetTable, dictionary: TokenDictionary) -> Result<Self, TrainError> {
        let molecules = table
            .smiles
            .iter()
            .map(|s| PreparedMolecule::new(s, &dictionary))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            molecules,
            smiles: table.smiles.clone(),
            labels: table.labels.clone(),
            mask: table.mask.clone(),
            task_names: table.task_names.clone(),
            task_type: table.task_type,
            dictionary,
        })
    }

    /// Builds the token dictionary from the table's own SMILES.
    pub fn from_table(table: &DatasetTable) -> Result<Self, TrainError> {
        let dictionary = TokenDictionary::build(&table.smiles).map_err(crate::model::ModelError::from)?;
        Self::new(table, dictionary)
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.task_names.len()
    }

    pub fn max_tokens(&self) -> usize {
        self.molecules.iter().map(|m| m.tokens.len()).max().unwrap_or(0)
    }

    pub fn scaffold_keys(&self) -> Vec<String> {
        self.molecules.iter().map(|m| murcko_scaffold(&m.graph)).collect()
    }

    pub fn split(&self, kind: SplitKind, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment, TrainError> {
        match kind {
            SplitKind::Random => random_split(self.len(), ratios, seed),
            SplitKind::Scaffold => scaffold_split(&self.scaffold_keys(), ratios, seed),
        }
    }

    fn rows(&self, source: &Tensor, idx: &[usize]) -> Tensor {
        let t = source.cols();
        let mut data = Vec::with_capacity(idx.len() * t);
        for &i in idx {
            data.extend_from_slice(source.row(i));
        }
        Tensor::new(idx.len(), t, data).expect("row width")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation metric.
    pub model: MmsgModel,
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub history: Vec<EpochLog>,
}

/// Head outputs for the given rows, in label units, one row per molecule.
pub fn predict_rows(model: &MmsgModel, data: &PreparedDataset, idx: &[usize], batch_size: usize) -> Result<Tensor, TrainError> {
    let t = model.config.num_tasks;
    let mut out = Vec::with_capacity(idx.len() * t);
    for chunk in idx.chunks(batch_size.max(1)) {
        let mols: Vec<&PreparedMolecule> = chunk.iter().map(|&i| &data.molecules[i]).collect();
        for p in model.predict_batch(&mols)? {
            out.extend(p.values);
        }
    }
    Ok(Tensor::new(idx.len(), t, out).expect("row width"))
}

/// Dataset metric (ROC-AUC or RMSE) of `model` on the given rows.
pub fn evaluate(model: &MmsgModel, data: &PreparedDataset, idx: &[usize], batch_size: usize) -> Result<f64, TrainError> {
    let preds = predict_rows(model, data, idx, batch_size)?;
    Ok(task_metric(data.task_type, &preds, &data.rows(&data.labels, idx), &data.rows(&data.mask, idx))?)
}

/// Trains a fresh model on `train_idx`, keeping the parameters of the epoch
/// with the best metric on `val_idx`. With no usable validation metric the
/// final parameters are kept.
pub fn train_model(
    data: &PreparedDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    train_config.validate()?;
    if train_idx.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut model = MmsgModel::new(model_config.clone(), seed)?;
    if model_config.task_type == TaskType::Regression {
        model.scaler = Some(TargetScaler::fit(&data.labels, &data.mask, train_idx));
    }
    let steps_per_epoch = train_idx.len().div_ceil(train_config.batch_size);
    let schedule = NoamSchedule::from_epochs(
        train_config.init_lr,
        train_config.max_lr,
        train_config.final_lr,
        train_config.warmup_epochs,
        train_config.epochs,
        steps_per_epoch,
    )?;
    let mut adam = Adam::new(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6e64_6f6d_5f5f);
    let mut order = train_idx.to_vec();
    let higher = higher_is_better(data.task_type);

    let mut best: Option<(f64, usize, crate::diff::ParamStore)> = None;
    let mut history = Vec::with_capacity(train_config.epochs);
    let mut step = 0usize;
    for epoch in 0..train_config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        let mut lr = schedule.lr(step);
        for chunk in order.chunks(train_config.batch_size) {
            lr = schedule.lr(step);
            step += 1;
            let (targets, mask) = batch_targets(data, &model, chunk);
            if mask.data().iter().all(|&m| m == 0.0) {
                continue;
            }
            let mols: Vec<&PreparedMolecule> = chunk.iter().map(|&i| &data.molecules[i]).collect();
            let batch = MolBatch::new(&mols, &model.config)?;
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &batch)?;
            let loss = model.loss(&mut tape, out.outputs, &targets, &mask)?;
            loss_sum += tape.value(loss).item();
            loss_batches += 1;
            let grads = tape.backward(loss);
            drop(out);
            model.store.zero_grad();
            model.store.accumulate(&grads);
            adam.step(&mut model.store, lr)?;
        }
        let train_loss = if loss_batches > 0 { loss_sum / loss_batches as f64 } else { f64::NAN };
        let val_metric = if val_idx.is_empty() {
            None
        } else {
            match evaluate(&model, data, val_idx, train_config.batch_size) {
                Ok(v) => Some(v),
                Err(TrainError::Metric(e)) => {
                    warn!("validation metric unavailable: {e}");
                    None
                }
                Err(e) => return Err(e),
            }
        };
        info!("seed {seed} epoch {epoch}: train_loss={train_loss:.6} val={val_metric:?} lr={lr:.3e}");
        if let Some(v) = val_metric {
            let improved = match &best {
                None => true,
                Some((b, _, _)) => (higher && v > *b) || (!higher && v < *b),
            };
            if improved {
                best = Some((v, epoch, model.store.clone()));
            }
        }
        history.push(EpochLog { epoch, train_loss, val_metric, lr });
    }

    let (best_val, best_epoch) = match best {
        Some((v, e, store)) => {
            model.store.copy_values_from(&store)?;
            (Some(v), e)
        }
        None => (None, train_config.epochs - 1),
    };
    model.store.zero_grad();
    Ok(TrainOutcome { model, best_epoch, best_val, history })
}

/// Targets (standardized for regression) and mask rows for a batch.
fn batch_targets(data: &PreparedDataset, model: &MmsgModel, idx: &[usize]) -> (Tensor, Tensor) {
    let mut targets = data.rows(&data.labels, idx);
    let mask = data.rows(&data.mask, idx);
    if let Some(scaler) = &model.scaler {
        for r in 0..targets.rows() {
            for t in 0..targets.cols() {
                if mask.get(r, t) != 0.0 {
                    let v = scaler.transform(t, targets.get(r, t));
                    targets.set(r, t, v);
                }
            }
        }
    }
    (targets, mask)
}

/// The file written after a multi-seed run. Wall-clock time is kept out of
/// the serialized form so identical runs give identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub metric: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub config: serde_json::Value,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn new(metric: &str, per_seed: Vec<f64>, config: serde_json::Value) -> Self {
        let (mean, std) = mean_std(&per_seed);
        Self { metric: metric.to_string(), per_seed, mean, std, config, wall_clock_secs: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub split: SplitAssignment,
    pub outcome: TrainOutcome,
    pub test_metric: f64,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: ExperimentReport,
    pub runs: Vec<SeedRun>,
}

fn run_seed(data: &PreparedDataset, config: &RunConfig, model_config: &ModelConfig, seed: u64) -> Result<SeedRun, TrainError> {
    let split = data.split(config.split, SplitRatios::default(), seed)?;
    info!("seed {seed}: split sizes {:?}", split.sizes());
    let outcome = train_model(data, &split.train, &split.val, model_config, &config.train_config(), seed)?;
    let test_metric = evaluate(&outcome.model, data, &split.test, config.batch_size)?;
    info!("seed {seed}: best epoch {} val {:?} test {test_metric}", outcome.best_epoch, outcome.best_val);
    Ok(SeedRun { seed, split, outcome, test_metric })
}

/// Splits, trains and tests once per seed in `config.seeds`, running up to
/// `threads` seeds at a time. Results are ordered by seed list position, so
/// the report does not depend on the thread count.
pub fn run_experiment(data: &PreparedDataset, config: &RunConfig, threads: usize) -> Result<Experiment, TrainError> {
    let started = Instant::now();
    config.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    let model_config = config.model_config(data);
    model_config.validate()?;
    let seeds = &config.seeds;
    let threads = threads.clamp(1, seeds.len().max(1));
    let slots: Vec<Mutex<Option<Result<SeedRun, TrainError>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= seeds.len() {
                    break;
                }
                let result = run_seed(data, config, &model_config, seeds[k]);
                *slots[k].lock().expect("result slot") = Some(result);
            });
        }
    });
    let runs = slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot").expect("every seed ran"))
        .collect::<Result<Vec<_>, _>>()?;
    let per_seed = runs.iter().map(|r| r.test_metric).collect();
    let snapshot = serde_json::to_value(config).expect("config serializes");
    let mut report = ExperimentReport::new(metric_name(data.task_type), per_seed, snapshot);
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    info!(
        "{} over {} seeds: mean {} std {} ({:.1}s)",
        report.metric,
        runs.len(),
        report.mean,
        report.std,
        report.wall_clock_secs
    );
    Ok(Experiment { report, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_keys() {
        let r = ExperimentReport::new("rmse", vec![1.0, 0.0], serde_json::json!({}));
        assert_eq!((r.mean, r.std), (0.5, 0.5));
        let v = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        keys.sort();
        assert_eq!(keys, ["config", "mean", "metric", "per_seed", "std"]);
    }

    #[test]
    fn train_config_checks() {
        let ok = TrainConfig { batch_size: 4, epochs: 3, warmup_epochs: 1, init_lr: 1e-4, max_lr: 1e-3, final_lr: 1e-4 };
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { warmup_epochs: 3, ..ok }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..ok }.validate().is_err());
        assert!(TrainConfig { init_lr: 2e-3, ..ok }.validate().is_err());
    }
}
