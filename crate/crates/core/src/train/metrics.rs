use thiserror::Error;

use crate::diff::Tensor;
use crate::model::TaskType;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("ROC-AUC needs at least one positive and one negative label")]
    SingleClass,
    #[error("length mismatch: {0} scores, {1} labels")]
    LengthMismatch(usize, usize),
    #[error("no unmasked labels")]
    Empty,
    #[error("non-finite score")]
    NonFinite,
}

/// Area under the ROC curve from average ranks (Mann-Whitney U), ties
/// counted as half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps every quantity an integer.
    let mut rank2_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u64;
        rank2_pos += rank2 * order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let u2 = rank2_pos - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != targets.len() {
        return Err(MetricError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    let sq: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / preds.len() as f64).sqrt())
}

/// Which direction of a metric is an improvement.
pub fn higher_is_better(task_type: TaskType) -> bool {
    task_type == TaskType::Classification
}

pub fn metric_name(task_type: TaskType) -> &'static str {
    match task_type {
        TaskType::Classification => "roc_auc",
        TaskType::Regression => "rmse",
    }
}

/// Dataset-level metric over unmasked cells, averaged across tasks.
/// Classification tasks with a single class present are skipped; if no task
/// qualifies the result is `SingleClass`.
pub fn task_metric(task_type: TaskType, preds: &Tensor, labels: &Tensor, mask: &Tensor) -> Result<f64, MetricError> {
    if preds.shape() != labels.shape() || preds.shape() != mask.shape() {
        return Err(MetricError::LengthMismatch(preds.len(), labels.len()));
    }
    let mut per_task = Vec::new();
    for t in 0..preds.cols() {
        let rows: Vec<usize> = (0..preds.rows()).filter(|&r| mask.get(r, t) != 0.0).collect();
        if rows.is_empty() {
            continue;
        }
        let p: Vec<f64> = rows.iter().map(|&r| preds.get(r, t)).collect();
        match task_type {
            TaskType::Classification => {
                let l: Vec<bool> = rows.iter().map(|&r| labels.get(r, t) != 0.0).collect();
                match roc_auc(&p, &l) {
                    Ok(v) => per_task.push(v),
                    Err(MetricError::SingleClass) => continue,
                    Err(e) => return Err(e),
                }
            }
            TaskType::Regression => {
                let y: Vec<f64> = rows.iter().map(|&r| labels.get(r, t)).collect();
                per_task.push(rmse(&p, &y)?);
            }
        }
    }
    if per_task.is_empty() {
        return Err(match task_type {
            TaskType::Classification => MetricError::SingleClass,
            TaskType::Regression => MetricError::Empty,
        });
    }
    Ok(per_task.iter().sum::<f64>() / per_task.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
