//! Confusion-matrix evaluation and report rendering.
//!
//! Reports follow the usual classification-report shape: per-class precision,
//! recall, F1, and support, plus accuracy and macro/weighted averages. All
//! 0/0 ratios are defined as 0 so a report is a total function of the matrix.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("y_true has {true_len} entries but y_pred has {pred_len}")]
    LengthMismatch { true_len: usize, pred_len: usize },
    #[error("class index {value} out of range for {classes} classes")]
    ClassOutOfRange { value: usize, classes: usize },
    #[error("cannot build a report from an empty confusion matrix")]
    EmptyMatrix,
}

/// Row-major C×C count matrix; entry (t, p) counts examples of true class t
/// predicted as p.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_pairs(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<Self, MetricsError> {
        if y_true.len() != y_pred.len() {
            return Err(MetricsError::LengthMismatch {
                true_len: y_true.len(),
                pred_len: y_pred.len(),
            });
        }
        let mut counts = vec![0u64; classes * classes];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= classes {
                return Err(MetricsError::ClassOutOfRange { value: t, classes });
            }
            if p >= classes {
                return Err(MetricsError::ClassOutOfRange { value: p, classes });
            }
            counts[t * classes + p] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, t: usize, p: usize) -> u64 {
        self.counts[t * self.classes + p]
    }

    /// Number of examples whose true class is `t` (row sum).
    pub fn support(&self, t: usize) -> u64 {
        (0..self.classes).map(|p| self.count(t, p)).sum()
    }

    /// Number of examples predicted as `p` (column sum).
    pub fn predicted(&self, p: usize) -> u64 {
        (0..self.classes).map(|t| self.count(t, p)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full evaluation summary. Class metrics are indexed by class; display
/// labels are supplied at render time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Computes per-class metrics and averages from a non-empty matrix.
///
/// Macro averages are unweighted means over all classes, zero-support classes
/// included. Weighted averages weight each class by its support; the weighted
/// recall collapses algebraically to trace/total and is computed that way, so
/// it equals accuracy bit-for-bit.
pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let c = cm.classes();
    let mut classes = Vec::with_capacity(c);
    for k in 0..c {
        let p = ratio(cm.count(k, k), cm.predicted(k));
        let r = ratio(cm.count(k, k), cm.support(k));
        classes.push(ClassMetrics { precision: p, recall: r, f1: f1(p, r), support: cm.support(k) });
    }
    let accuracy = cm.trace() as f64 / total as f64;
    let n = c as f64;
    let macro_avg = Averages {
        precision: classes.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: classes.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: classes.iter().map(|m| m.f1).sum::<f64>() / n,
    };
    let weight = |f: fn(&ClassMetrics) -> f64| {
        classes.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total as f64
    };
    let weighted_avg = Averages {
        precision: weight(|m| m.precision),
        recall: accuracy,
        f1: weight(|m| m.f1),
    };
    Ok(ClassificationReport { classes, accuracy, macro_avg, weighted_avg, total })
}

/// Convenience: confusion matrix and report in one step.
pub fn evaluate(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ClassificationReport, MetricsError> {
    report(&ConfusionMatrix::from_pairs(y_true, y_pred, classes)?)
}

const COL_TYPE: usize = 12;
const COL_P: usize = 9;
const COL_R: usize = 6;
const COL_F: usize = 8;
const COL_S: usize = 7;

fn report_row(label: &str, p: &str, r: &str, f: &str, s: &str) -> String {
    let row = format!(
        "{label:<COL_TYPE$}  {p:>COL_P$}  {r:>COL_R$}  {f:>COL_F$}  {s:>COL_S$}"
    );
    row.trim_end().to_string()
}

/// Renders the per-class table. `labels` supplies the display label for each
/// class index (typically the raw attacker-type codes, which are ascending by
/// construction); metrics print with two decimals.
pub fn render_report(report: &ClassificationReport, labels: &[u16]) -> String {
    let mut out = String::new();
    out.push_str(&report_row("Type", "Precision", "Recall", "F1-Score", "Support"));
    out.push('\n');
    for (idx, m) in report.classes.iter().enumerate() {
        let label = labels
            .get(idx)
            .map(|l| l.to_string())
            .unwrap_or_else(|| idx.to_string());
        out.push_str(&report_row(
            &label,
            &format!("{:.2}", m.precision),
            &format!("{:.2}", m.recall),
            &format!("{:.2}", m.f1),
            &m.support.to_string(),
        ));
        out.push('\n');
    }
    out.push('\n');
    out.push_str(&report_row("Accuracy", "", "", &format!("{:.2}", report.accuracy), &report.total.to_string()));
    out.push('\n');
    for (name, avg) in [("Macro avg", report.macro_avg), ("Weighted avg", report.weighted_avg)] {
        out.push_str(&report_row(
            name,
            &format!("{:.2}", avg.precision),
            &format!("{:.2}", avg.recall),
            &format!("{:.2}", avg.f1),
            &report.total.to_string(),
        ));
        out.push('\n');
    }
    out
}

/// Renders the model-accuracy comparison table. Accuracies print as whole
/// percentages, rounded half away from zero.
pub fn render_comparison(entries: &[(String, f64)]) -> String {
    let name_width = entries
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once("Model".len()))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    out.push_str(&format!("{:<name_width$}  {}\n", "Model", "Accuracy (%)"));
    for (name, accuracy) in entries {
        out.push_str(&format!("{name:<name_width$}  {:>12}\n", (accuracy * 100.0).round() as i64));
    }
    out
}

/// JSON form of a report, with per-class display labels attached.
pub fn report_to_json(report: &ClassificationReport, labels: &[u16]) -> serde_json::Value {
    let classes: Vec<serde_json::Value> = report
        .classes
        .iter()
        .enumerate()
        .map(|(idx, m)| {
            serde_json::json!({
                "label": labels.get(idx).copied().map(i64::from).unwrap_or(idx as i64),
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "support": m.support,
            })
        })
        .collect();
    serde_json::json!({
        "classes": classes,
        "accuracy": report.accuracy,
        "macro": report.macro_avg,
        "weighted": report.weighted_avg,
    })
}
