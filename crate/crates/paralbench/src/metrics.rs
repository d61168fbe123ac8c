//! Evaluation metrics: weighted/unweighted accuracy, weighted F1, and mean
//! absolute error, all computed from integer tallies in 64-bit arithmetic.
//!
//! Classification metrics are derived from a [`ConfusionMatrix`]. Weighted
//! accuracy is computed as trace/N, which is an exact algebraic reduction of
//! the support-weighted mean of per-class accuracies (the weights cancel
//! each class's denominator), not an approximation of it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::registry::{TaskKind, TaskSpec};

/// Identifier of one scalar metric.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum MetricId {
    Wa,
    Ua,
    Wf1,
    Mae,
}

impl MetricId {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Wa => "WA",
            MetricId::Ua => "UA",
            MetricId::Wf1 => "WF1",
            MetricId::Mae => "MAE",
        }
    }

    /// Direction of improvement; MAE is the only lower-is-better metric.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricId::Mae)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wa" => Ok(MetricId::Wa),
            "ua" => Ok(MetricId::Ua),
            "wf1" => Ok(MetricId::Wf1),
            "mae" => Ok(MetricId::Mae),
            other => Err(HarnessError::Config(format!("unknown metric `{other}`"))),
        }
    }
}

impl std::fmt::Display for MetricId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Row-major C x C count matrix; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Tally a confusion matrix from parallel label-index vectors.
    pub fn from_labels(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(HarnessError::ShapeMismatch {
                context: "confusion".into(),
                expected: format!("{} predictions", y_true.len()),
                got: format!("{}", y_pred.len()),
            });
        }
        if y_true.is_empty() {
            return Err(HarnessError::Run("confusion over empty input".into()));
        }
        if classes == 0 {
            return Err(HarnessError::Run("confusion with zero declared classes".into()));
        }
        let mut counts = vec![0u64; classes * classes];
        for (&t, &p) in y_true.iter().zip(y_pred.iter()) {
            if t >= classes || p >= classes {
                return Err(HarnessError::Run(format!(
                    "label index out of range: ({t}, {p}) with {classes} classes"
                )));
            }
            counts[t * classes + p] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn count(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class * self.classes + pred_class]
    }

    /// Support of a true class (N_c).
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class * self.classes..(class + 1) * self.classes]
            .iter()
            .sum()
    }

    /// Number of samples predicted as `class`.
    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.classes).map(|t| self.count(t, class)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }
}

/// Build a confusion matrix (convenience free function mirroring the metric
/// functions below).
pub fn confusion(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_labels(y_true, y_pred, classes)
}

/// Weighted accuracy: overall fraction correct, trace/N.
pub fn wa(cm: &ConfusionMatrix) -> f64 {
    cm.trace() as f64 / cm.total() as f64
}

/// Unweighted accuracy: mean of per-class accuracies over classes that are
/// present in the reference labels; empty classes are excluded from the
/// average rather than contributing zero terms.
pub fn ua(cm: &ConfusionMatrix) -> f64 {
    let mut sum = 0.0f64;
    let mut present = 0usize;
    for class in 0..cm.class_count() {
        let support = cm.support(class);
        if support == 0 {
            continue;
        }
        sum += cm.count(class, class) as f64 / support as f64;
        present += 1;
    }
    // The constructor guarantees at least one sample, hence present >= 1.
    sum / present as f64
}

/// Per-class precision/recall/F1 with the 0/0 -> 0 convention.
fn class_prf(cm: &ConfusionMatrix, class: usize) -> (f64, f64, f64) {
    let tp = cm.count(class, class) as f64;
    let predicted = cm.predicted(class) as f64;
    let support = cm.support(class) as f64;
    let precision = if predicted == 0.0 { 0.0 } else { tp / predicted };
    let recall = if support == 0.0 { 0.0 } else { tp / support };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Weighted F1: support-weighted mean of per-class F1 scores.
pub fn wf1(cm: &ConfusionMatrix) -> f64 {
    let mut weighted = 0.0f64;
    for class in 0..cm.class_count() {
        let (_, _, f1) = class_prf(cm, class);
        weighted += cm.support(class) as f64 * f1;
    }
    weighted / cm.total() as f64
}

/// Mean absolute error over parallel prediction/reference vectors.
pub fn mae_metric(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(HarnessError::ShapeMismatch {
            context: "mae".into(),
            expected: format!("{} predictions", y_true.len()),
            got: format!("{}", y_pred.len()),
        });
    }
    if y_true.is_empty() {
        return Err(HarnessError::Run("mae over empty input".into()));
    }
    let mut sum = 0.0f64;
    for (&t, &p) in y_true.iter().zip(y_pred.iter()) {
        if !t.is_finite() || !p.is_finite() {
            return Err(HarnessError::NonFinite("mae input".into()));
        }
        sum += (t - p).abs();
    }
    Ok(sum / y_true.len() as f64)
}

/// Per-class diagnostics attached to classification reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerClassStats {
    pub class: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metric values for one evaluation, plus per-class diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub task_id: String,
    pub n: u64,
    pub values: BTreeMap<MetricId, f64>,
    pub per_class: Vec<PerClassStats>,
    /// Declared classes absent from the reference labels (excluded from UA).
    pub excluded_empty_classes: Vec<String>,
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn value(&self, id: MetricId) -> Option<f64> {
        self.values.get(&id).copied()
    }
}

/// Assemble a classification report for the requested metric set.
pub fn classification_report(
    task_id: &str,
    class_names: &[String],
    cm: &ConfusionMatrix,
    metric_ids: &[MetricId],
) -> Result<MetricReport> {
    if class_names.len() != cm.class_count() {
        return Err(HarnessError::ShapeMismatch {
            context: "classification_report".into(),
            expected: format!("{} class names", cm.class_count()),
            got: format!("{}", class_names.len()),
        });
    }
    let mut values = BTreeMap::new();
    for &id in metric_ids {
        let value = match id {
            MetricId::Wa => wa(cm),
            MetricId::Ua => ua(cm),
            MetricId::Wf1 => wf1(cm),
            MetricId::Mae => {
                return Err(HarnessError::Run(
                    "MAE requested for a classification report".into(),
                ))
            }
        };
        values.insert(id, value);
    }
    let mut per_class = Vec::with_capacity(cm.class_count());
    let mut excluded = Vec::new();
    for (idx, name) in class_names.iter().enumerate() {
        let (precision, recall, f1) = class_prf(cm, idx);
        let support = cm.support(idx);
        if support == 0 {
            excluded.push(name.clone());
        }
        per_class.push(PerClassStats {
            class: name.clone(),
            support,
            precision,
            recall,
            f1,
        });
    }
    Ok(MetricReport {
        task_id: task_id.to_string(),
        n: cm.total(),
        values,
        per_class,
        excluded_empty_classes: excluded,
        notes: Vec::new(),
    })
}

/// Assemble a regression report (MAE only).
pub fn regression_report(task_id: &str, y_true: &[f64], y_pred: &[f64]) -> Result<MetricReport> {
    let mae = mae_metric(y_true, y_pred)?;
    let mut values = BTreeMap::new();
    values.insert(MetricId::Mae, mae);
    Ok(MetricReport {
        task_id: task_id.to_string(),
        n: y_true.len() as u64,
        values,
        per_class: Vec::new(),
        excluded_empty_classes: Vec::new(),
        notes: Vec::new(),
    })
}

/// Predictions paired with references, typed by task kind.
#[derive(Debug, Clone)]
pub enum TaskPredictions<'a> {
    Classification {
        y_true: &'a [usize],
        y_pred: &'a [usize],
    },
    Regression {
        y_true: &'a [f64],
        y_pred: &'a [f64],
    },
}

/// Route predictions to the metric set declared by the task.
pub fn evaluate(task: &TaskSpec, preds: &TaskPredictions) -> Result<MetricReport> {
    match (task.kind, preds) {
        (TaskKind::Classification, TaskPredictions::Classification { y_true, y_pred }) => {
            let space = task.label_space.as_ref().ok_or_else(|| {
                HarnessError::InvalidTaskSpec {
                    task: task.task_id.clone(),
                    reason: "classification task without a label space".into(),
                }
            })?;
            let cm = confusion(y_true, y_pred, space.len())?;
            classification_report(&task.task_id, space.classes(), &cm, &task.metrics)
        }
        (TaskKind::Regression, TaskPredictions::Regression { y_true, y_pred }) => {
            regression_report(&task.task_id, y_true, y_pred)
        }
        _ => Err(HarnessError::Run(format!(
            "prediction kind does not match task `{}`",
            task.task_id
        ))),
    }
}
