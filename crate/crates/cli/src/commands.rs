use std::fs;
use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};

use mmsg_core::chem::TokenDictionary;
use mmsg_core::config::{ConfigError, RunConfig};
use mmsg_core::data::{load_csv, DataError};
use mmsg_core::diff::{GradCheckOptions, Tensor};
use mmsg_core::model::{Checkpoint, MmsgModel, ModelConfig, ModelError, PreparedMolecule, TaskType};
use mmsg_core::train::{evaluate, metric_name, run_experiment, PreparedDataset, SplitAssignment, SplitKind, SplitRatios, TrainError};

use crate::Failure;

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(io_failure(p)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Data(format!("stdout: {e}"))),
    }
}

fn read_dictionary(path: &Path) -> Result<TokenDictionary, Failure> {
    let text = fs::read_to_string(path).map_err(io_failure(path))?;
    let tokens = text.lines().map(str::to_string).filter(|t| !t.is_empty()).collect();
    TokenDictionary::from_tokens(tokens).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

pub fn build_vocab(data: &Path, out: &Path) -> Result<(), Failure> {
    let table = load_csv(data, None)?;
    let dict = TokenDictionary::build(&table.smiles).map_err(|e| Failure::Data(e.to_string()))?;
    let mut text = dict.tokens().join("\n");
    text.push('\n');
    fs::write(out, text).map_err(io_failure(out))?;
    info!("wrote {} tokens to {}", dict.len(), out.display());
    Ok(())
}

pub fn split(data: &Path, kind: SplitKind, seed: u64, out: Option<&Path>) -> Result<(), Failure> {
    let table = load_csv(data, None)?;
    let prepared = PreparedDataset::from_table(&table)?;
    let assignment = prepared.split(kind, SplitRatios::default(), seed)?;
    info!("{kind} split sizes {:?}", assignment.sizes());
    let mut text = serde_json::to_string(&assignment).expect("split serializes");
    text.push('\n');
    write_output(out, &text)
}

fn thread_count(flag: Option<usize>) -> Result<usize, Failure> {
    if let Some(n) = flag {
        return Ok(n.max(1));
    }
    match std::env::var("MMSG_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|n| n.max(1))
            .map_err(|_| Failure::Usage(format!("MMSG_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn train(config_path: &Path, vocab: Option<&Path>, threads: Option<usize>) -> Result<(), Failure> {
    let config = RunConfig::load(config_path)?;
    config.validate()?;
    for w in config.warnings() {
        warn!("{w}");
    }
    if config.data_path.is_empty() {
        return Err(Failure::Usage("config has no data_path".into()));
    }
    let table = load_csv(Path::new(&config.data_path), config.task_type)?;
    let data = match vocab {
        Some(p) => PreparedDataset::new(&table, read_dictionary(p)?)?,
        None => PreparedDataset::from_table(&table)?,
    };
    let threads = thread_count(threads)?;
    info!(
        "training on {} molecules ({} tasks, {:?}), {} seeds, {} threads",
        data.len(),
        data.num_tasks(),
        data.task_type,
        config.seeds.len(),
        threads
    );
    let experiment = run_experiment(&data, &config, threads)?;

    let out_dir = PathBuf::from(&config.output_dir);
    fs::create_dir_all(&out_dir).map_err(io_failure(&out_dir))?;
    let label = format!("{}-{}", config.dataset_label(), config.split);
    for run in &experiment.runs {
        let ckpt = out_dir.join(config.checkpoint_name(run.seed));
        Checkpoint::from_model(&run.outcome.model, &data.dictionary, &data.task_names).save(&ckpt)?;
        let split_path = out_dir.join(format!("{label}-{}.split.json", run.seed));
        let text = serde_json::to_string(&run.split).expect("split serializes");
        fs::write(&split_path, text + "\n").map_err(io_failure(&split_path))?;
        info!("seed {}: test {} = {} -> {}", run.seed, experiment.report.metric, run.test_metric, ckpt.display());
    }
    let report_path = out_dir.join(format!("{label}-report.json"));
    let text = serde_json::to_string_pretty(&experiment.report).expect("report serializes");
    fs::write(&report_path, text + "\n").map_err(io_failure(&report_path))?;
    println!(
        "{} {:.6} +/- {:.6} over {} seeds ({:.1}s)",
        experiment.report.metric,
        experiment.report.mean,
        experiment.report.std,
        experiment.runs.len(),
        experiment.report.wall_clock_secs
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(MmsgModel, TokenDictionary, Vec<String>), Failure> {
    Ok(Checkpoint::load(path)?.into_model()?)
}

pub fn eval(checkpoint: &Path, data: &Path, split: Option<&Path>, subset: Option<&str>) -> Result<(), Failure> {
    let (model, dict, task_names) = load_checkpoint(checkpoint)?;
    let table = load_csv(data, Some(model.config.task_type))?;
    if table.task_names != task_names {
        return Err(Failure::Data(format!(
            "dataset tasks {:?} differ from checkpoint tasks {:?}",
            table.task_names, task_names
        )));
    }
    let prepared = PreparedDataset::new(&table, dict)?;
    let idx: Vec<usize> = match (split, subset) {
        (Some(p), Some(which)) => {
            let text = fs::read_to_string(p).map_err(io_failure(p))?;
            let s: SplitAssignment =
                serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            let list = match which {
                "train" => s.train,
                "val" => s.val,
                _ => s.test,
            };
            if let Some(&bad) = list.iter().find(|&&i| i >= prepared.len()) {
                return Err(Failure::Data(format!("split index {bad} outside dataset of {}", prepared.len())));
            }
            list
        }
        _ => (0..prepared.len()).collect(),
    };
    let value = evaluate(&model, &prepared, &idx, 64)?;
    println!("{} {value}", metric_name(model.config.task_type));
    Ok(())
}

/// SMILES from a file or stdin: plain lines, or a CSV whose header has a
/// smiles column.
fn read_smiles(input: Option<&Path>) -> Result<Vec<String>, Failure> {
    let mut text = String::new();
    match input {
        Some(p) => text = fs::read_to_string(p).map_err(io_failure(p))?,
        None => {
            io::stdin()
                .lock()
                .read_to_string(&mut text)
                .map_err(|e| Failure::Data(format!("stdin: {e}")))?;
        }
    }
    let first = text.lines().next().unwrap_or("");
    let col = first.split(',').position(|h| h.trim().eq_ignore_ascii_case("smiles"));
    let out = match col {
        Some(c) => {
            let mut reader = csv::Reader::from_reader(text.as_bytes());
            let mut out = Vec::new();
            for rec in reader.records() {
                let rec = rec.map_err(|e| Failure::Data(e.to_string()))?;
                out.push(rec.get(c).unwrap_or("").trim().to_string());
            }
            out
        }
        None => text.as_bytes().lines().map_while(Result::ok).map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect(),
    };
    Ok(out)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Predictions (or fused embeddings) per input SMILES. Molecules that fail
/// to parse or encode get empty fields and a warning.
pub fn predict(checkpoint: &Path, input: Option<&Path>, out: Option<&Path>, embed: bool) -> Result<(), Failure> {
    let (model, dict, task_names) = load_checkpoint(checkpoint)?;
    let smiles = read_smiles(input)?;
    let columns: Vec<String> = if embed {
        (0..model.config.hidden_dim).map(|k| format!("e{k}")).collect()
    } else {
        task_names
    };
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Failure::Data(e.to_string());
    writer
        .write_record(std::iter::once("smiles".to_string()).chain(columns.iter().cloned()))
        .map_err(csv_err)?;
    let mut failed = 0usize;
    for s in &smiles {
        let row = PreparedMolecule::new(s, &dict).and_then(|m| {
            if embed {
                model.export_embedding(&m)
            } else {
                model.predict(&m).map(|p| match model.config.task_type {
                    TaskType::Classification => p.values.into_iter().map(sigmoid).collect(),
                    TaskType::Regression => p.values,
                })
            }
        });
        let fields: Vec<String> = match row {
            Ok(values) => values.iter().map(|v| v.to_string()).collect(),
            Err(e) => {
                warn!("{s}: {e}");
                failed += 1;
                vec![String::new(); columns.len()]
            }
        };
        writer.write_record(std::iter::once(s.clone()).chain(fields)).map_err(csv_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Failure::Data(e.to_string()))?;
    info!("{} molecules, {} failed", smiles.len(), failed);
    write_output(out, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn gradcheck_config(vocab: usize, task_type: TaskType) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        depth: 2,
        gru_hidden: 4,
        gru_layers: 1,
        heads: 1,
        layers: 1,
        max_len: 64,
        transformer_hidden: 8,
        ffn_hidden: 8,
        ffn_layers: 2,
        vocab_size: vocab,
        num_tasks: 1,
        task_type,
        bias_enabled: true,
    }
}

pub fn gradcheck(smiles: &str, seed: u64, tolerance: f64, step: f64, max_entries: usize) -> Result<(), Failure> {
    let dict = TokenDictionary::build(&[smiles]).map_err(|e| Failure::Data(e.to_string()))?;
    let mol = PreparedMolecule::new(smiles, &dict)?;
    let mut all_passed = true;
    for (task_type, target) in [(TaskType::Regression, 0.7), (TaskType::Classification, 1.0)] {
        let mut model = MmsgModel::new(gradcheck_config(dict.len(), task_type), seed)?;
        let options = GradCheckOptions {
            step,
            tolerance,
            max_entries: if max_entries == 0 { model.store.num_values() } else { max_entries },
            seed,
        };
        let report = model.grad_check(&[&mol], &Tensor::scalar(target), &Tensor::scalar(1.0), options)?;
        println!(
            "{:?}: max_rel_error {:.3e} over {} coordinates ({} skipped at kinks), tolerance {:.0e}: {}",
            task_type,
            report.max_rel_error,
            report.checked,
            report.skipped,
            tolerance,
            if report.passed() { "PASS" } else { "FAIL" }
        );
        if let (false, Some((name, k, a, n))) = (report.passed(), &report.worst) {
            println!("  worst: {name}[{k}] analytic {a:.6e} numeric {n:.6e}");
        }
        all_passed &= report.passed();
    }
    if all_passed {
        Ok(())
    } else {
        Err(Failure::Check("gradient check failed".into()))
    }
}
