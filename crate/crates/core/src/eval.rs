//! Test-split metrics and the full-input vs selected-input comparison.
//!
//! Location calls are scored by accuracy and micro-averaged F1 (pooled
//! confusion counts); size estimates by the per-case average of the squared
//! error. [`compare_runs`] lines up two trained runs — all channels vs the
//! selected subset — and reports signed relative errors per metric plus the
//! convergence cost of each run.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::train::TrainLog;

use core::fmt;

/// Errors from metric computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    LengthMismatch { left: usize, right: usize },
    EmptyInput,
    /// A label lies outside the declared class set.
    BadLabel {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    Config { detail: String },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} predictions vs {right} labels")
            }
            EvalError::EmptyInput => write!(f, "no cases to evaluate"),
            EvalError::BadLabel {
                index,
                label,
                num_classes,
            } => write!(
                f,
                "label {label} at position {index} outside {num_classes} classes"
            ),
            EvalError::Config { detail } => write!(f, "invalid evaluation input: {detail}"),
        }
    }
}

impl core::error::Error for EvalError {}

/// One split's scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub micro_f1: f64,
    /// Mean squared size error per case.
    pub sse_avg: f64,
    pub case_count: usize,
}

/// Signed relative errors of the selected-input run against the full-input
/// run, in percent. `None` marks an undefined ratio (full-run metric zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelErrors {
    pub accuracy: Option<f64>,
    pub micro_f1: Option<f64>,
    pub sse_avg: Option<f64>,
}

/// Side-by-side outcome of the full-input and selected-input runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub metrics_full: Metrics,
    pub metrics_selected: Metrics,
    pub rel_err: RelErrors,
    pub iterations_full: usize,
    pub iterations_selected: usize,
    /// `iterations_selected / iterations_full`; `None` when the full run
    /// recorded no iterations.
    pub iteration_ratio: Option<f64>,
    pub wall_time_full_s: f64,
    pub wall_time_selected_s: f64,
    pub selected_channels: Vec<String>,
}

fn check_lengths(left: usize, right: usize) -> Result<(), EvalError> {
    if left != right {
        return Err(EvalError::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

/// Fraction of exactly matching class labels.
pub fn accuracy(preds: &[usize], truth: &[usize]) -> Result<f64, EvalError> {
    check_lengths(preds.len(), truth.len())?;
    let correct = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Micro-averaged F1: `2·TP / (2·TP + FP + FN)` with true/false positives
/// and false negatives pooled across all classes.
pub fn micro_f1(preds: &[usize], truth: &[usize], num_classes: usize) -> Result<f64, EvalError> {
    check_lengths(preds.len(), truth.len())?;
    if num_classes == 0 {
        return Err(EvalError::Config {
            detail: "zero classes".into(),
        });
    }
    for (index, (&p, &t)) in preds.iter().zip(truth).enumerate() {
        let label = if p >= num_classes { p } else { t };
        if label >= num_classes {
            return Err(EvalError::BadLabel {
                index,
                label,
                num_classes,
            });
        }
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for class in 0..num_classes {
        for (&p, &t) in preds.iter().zip(truth) {
            match (p == class, t == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64))
}

/// Mean squared error per case.
pub fn sse_avg(sizes_pred: &[f64], sizes_true: &[f64]) -> Result<f64, EvalError> {
    check_lengths(sizes_pred.len(), sizes_true.len())?;
    let sum: f64 = sizes_pred
        .iter()
        .zip(sizes_true)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / sizes_pred.len() as f64)
}

/// Computes the full metric set for one evaluated split.
pub fn compute_metrics(
    class_preds: &[usize],
    class_truth: &[usize],
    sizes_pred: &[f64],
    sizes_true: &[f64],
    num_classes: usize,
) -> Result<Metrics, EvalError> {
    check_lengths(class_preds.len(), sizes_pred.len())?;
    Ok(Metrics {
        accuracy: accuracy(class_preds, class_truth)?,
        micro_f1: micro_f1(class_preds, class_truth, num_classes)?,
        sse_avg: sse_avg(sizes_pred, sizes_true)?,
        case_count: class_preds.len(),
    })
}

/// Signed relative change in percent; `None` when the baseline is zero.
fn relative_error(full: f64, selected: f64) -> Option<f64> {
    if full == 0.0 {
        None
    } else {
        Some((selected - full) / full * 100.0)
    }
}

/// Lines up a full-input run against a selected-input run evaluated on the
/// same split.
pub fn compare_runs(
    full: (&Metrics, &TrainLog),
    selected: (&Metrics, &TrainLog),
    selected_channels: Vec<String>,
) -> Result<ComparisonReport, EvalError> {
    let (metrics_full, log_full) = full;
    let (metrics_selected, log_selected) = selected;
    if metrics_full.case_count != metrics_selected.case_count {
        return Err(EvalError::Config {
            detail: format!(
                "runs evaluated on different splits: {} vs {} cases",
                metrics_full.case_count, metrics_selected.case_count
            ),
        });
    }
    let iteration_ratio = if log_full.iterations == 0 {
        None
    } else {
        Some(log_selected.iterations as f64 / log_full.iterations as f64)
    };
    Ok(ComparisonReport {
        metrics_full: *metrics_full,
        metrics_selected: *metrics_selected,
        rel_err: RelErrors {
            accuracy: relative_error(metrics_full.accuracy, metrics_selected.accuracy),
            micro_f1: relative_error(metrics_full.micro_f1, metrics_selected.micro_f1),
            sse_avg: relative_error(metrics_full.sse_avg, metrics_selected.sse_avg),
        },
        iterations_full: log_full.iterations,
        iterations_selected: log_selected.iterations,
        iteration_ratio,
        wall_time_full_s: log_full.wall_time_s,
        wall_time_selected_s: log_selected.wall_time_s,
        selected_channels,
    })
}
