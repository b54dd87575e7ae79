//! Confusion matrices and classification reports.
//!
//! Macro averages run over the classes appearing in either the truth or the
//! predictions of the evaluated records. Any ratio with a zero denominator is 0.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::hierarchy::{BreakdownLevel, ClassCode};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{truth} true labels but {pred} predictions")]
    ShapeMismatch { truth: usize, pred: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("reports differ in {0}")]
    MismatchedReports(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<ClassCode>,
    /// `matrix[i][j]`: records of true class `i` predicted as `j`.
    pub matrix: Vec<Vec<u64>>,
    /// Records left out because their class was discarded.
    pub n_excluded: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.matrix[i][i]).sum()
    }

    pub fn with_excluded(mut self, n: u64) -> Self {
        self.n_excluded = n;
        self
    }
}

pub fn confusion(y_true: &[ClassCode], y_pred: &[ClassCode]) -> Result<ConfusionMatrix, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::ShapeMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    let mut classes: Vec<ClassCode> = y_true.iter().chain(y_pred).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let mut matrix = vec![vec![0u64; classes.len()]; classes.len()];
    let idx = |c: &ClassCode| classes.binary_search(c).expect("class collected above");
    for (t, p) in y_true.iter().zip(y_pred) {
        matrix[idx(t)][idx(p)] += 1;
    }
    Ok(ConfusionMatrix {
        classes,
        matrix,
        n_excluded: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EvalMode {
    Flat,
    Dynamic,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Flat => "Flat",
            EvalMode::Dynamic => "Dynamic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<ClassCode, ClassScores>,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    pub weighted: Averages,
    pub accuracy: f64,
    pub mode: EvalMode,
    pub model_id: String,
    pub level: BreakdownLevel,
    pub n_evaluated: u64,
    pub n_excluded: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn report(
    cm: &ConfusionMatrix,
    mode: EvalMode,
    model_id: &str,
    level: BreakdownLevel,
) -> Result<EvalReport, MetricsError> {
    let total = cm.total();
    if cm.classes.is_empty() || total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let k = cm.classes.len();
    let mut per_class = BTreeMap::new();
    let mut macro_avg = Averages::default();
    let mut weighted = Averages::default();
    for (i, code) in cm.classes.iter().enumerate() {
        let tp = cm.matrix[i][i];
        let support: u64 = cm.matrix[i].iter().sum();
        let predicted: u64 = (0..k).map(|r| cm.matrix[r][i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        macro_avg.precision += precision;
        macro_avg.recall += recall;
        macro_avg.f1 += f1;
        let w = support as f64;
        weighted.precision += w * precision;
        weighted.recall += w * recall;
        weighted.f1 += w * f1;
        per_class.insert(
            *code,
            ClassScores {
                precision,
                recall,
                f1,
                support,
            },
        );
    }
    let (kf, tf) = (k as f64, total as f64);
    Ok(EvalReport {
        per_class,
        macro_avg: Averages {
            precision: macro_avg.precision / kf,
            recall: macro_avg.recall / kf,
            f1: macro_avg.f1 / kf,
        },
        weighted: Averages {
            precision: weighted.precision / tf,
            recall: weighted.recall / tf,
            f1: weighted.f1 / tf,
        },
        accuracy: ratio(cm.trace(), total),
        mode,
        model_id: model_id.to_string(),
        level,
        n_evaluated: total,
        n_excluded: cm.n_excluded,
    })
}

impl EvalReport {
    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned per-class table followed by the aggregate rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} {} (model {}, {} evaluated, {} excluded)",
            self.level, self.mode, "report", self.model_id, self.n_evaluated, self.n_excluded
        );
        let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9} {:>9}", "class", "P", "R", "F1", "support");
        for (c, m) in &self.per_class {
            let _ = writeln!(
                s,
                "{:<10} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                c.as_str(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
        for (name, a) in [("Weighted", self.weighted), ("Macro", self.macro_avg)] {
            let _ = writeln!(
                s,
                "{:<10} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                name, a.precision, a.recall, a.f1, self.n_evaluated
            );
        }
        let _ = writeln!(s, "{:<10} {:>9.2}", "Accuracy", self.accuracy);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub level: BreakdownLevel,
    pub model_id: String,
    pub flat: EvalReport,
    pub dynamic: EvalReport,
}

impl Comparison {
    /// `(dynamic - flat) / flat` on macro F1; 0 when flat is 0.
    pub fn macro_f1_relative_improvement(&self) -> f64 {
        let f = self.flat.macro_avg.f1;
        if f == 0.0 {
            0.0
        } else {
            (self.dynamic.macro_avg.f1 - f) / f
        }
    }

    pub fn deltas(&self) -> [(&'static str, Averages); 2] {
        let d = |a: Averages, b: Averages| Averages {
            precision: b.precision - a.precision,
            recall: b.recall - a.recall,
            f1: b.f1 - a.f1,
        };
        [
            ("Weighted", d(self.flat.weighted, self.dynamic.weighted)),
            ("Macro", d(self.flat.macro_avg, self.dynamic.macro_avg)),
        ]
    }

    /// Weighted and Macro rows, each with Flat and Dynamic sub-rows and the delta.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.level, self.model_id);
        let _ = writeln!(s, "{:<9} {:<8} {:>7} {:>7} {:>7}", "", "", "P", "R", "F1");
        let rows = [
            ("Weighted", self.flat.weighted, self.dynamic.weighted),
            ("Macro", self.flat.macro_avg, self.dynamic.macro_avg),
        ];
        for (name, f, d) in rows {
            for (label, a) in [("Flat", f), ("Dynamic", d)] {
                let first = if label == "Flat" { name } else { "" };
                let _ = writeln!(
                    s,
                    "{:<9} {:<8} {:>7.2} {:>7.2} {:>7.2}",
                    first, label, a.precision, a.recall, a.f1
                );
            }
            let _ = writeln!(
                s,
                "{:<9} {:<8} {:>+7.2} {:>+7.2} {:>+7.2}",
                "",
                "delta",
                d.precision - f.precision,
                d.recall - f.recall,
                d.f1 - f.f1
            );
        }
        let _ = writeln!(
            s,
            "Accuracy  Flat {:.2}  Dynamic {:.2}",
            self.flat.accuracy, self.dynamic.accuracy
        );
        let _ = writeln!(
            s,
            "Classes   Flat {}  Dynamic {}",
            self.flat.n_classes(),
            self.dynamic.n_classes()
        );
        let _ = writeln!(
            s,
            "Macro-F1 relative improvement: {:+.1}%",
            100.0 * self.macro_f1_relative_improvement()
        );
        s
    }
}

pub fn compare(flat: &EvalReport, dynamic: &EvalReport) -> Result<Comparison, MetricsError> {
    if flat.level != dynamic.level {
        return Err(MetricsError::MismatchedReports("level"));
    }
    if flat.model_id != dynamic.model_id {
        return Err(MetricsError::MismatchedReports("model"));
    }
    Ok(Comparison {
        level: flat.level,
        model_id: flat.model_id.clone(),
        flat: flat.clone(),
        dynamic: dynamic.clone(),
    })
}
