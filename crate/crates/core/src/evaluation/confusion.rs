use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::class::{Class, CLASS_ORDER, NUM_CLASSES};
use crate::error::{Error, Result};

/// Rows are the true class, columns the predicted class, both in class order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeAxis {
    /// Columns sum to one; the diagonal is the precision.
    ByPrediction,
    /// Rows sum to one; the diagonal is the sensitivity.
    ByTruth,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..NUM_CLASSES {
            for j in 0..NUM_CLASSES {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: ConfusionMatrix) -> ConfusionMatrix {
        self.merge(&rhs);
        self
    }
}

/// `counts[i][j] = #{truth = i, prediction = j}`.
pub fn confusion(predictions: &[Class], truth: &[Class]) -> Result<ConfusionMatrix> {
    let p: Vec<usize> = predictions.iter().map(|c| c.index()).collect();
    let t: Vec<usize> = truth.iter().map(|c| c.index()).collect();
    confusion_from_indices(&p, &t)
}

pub fn confusion_from_indices(predictions: &[usize], truth: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        if p >= NUM_CLASSES || t >= NUM_CLASSES {
            return Err(Error::Validation(format!("label index {} outside class order", p.max(t))));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Fractional matrix; empty rows/columns stay zero.
pub fn normalize(cm: &ConfusionMatrix, axis: NormalizeAxis) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
    let mut out = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        for j in 0..NUM_CLASSES {
            let denom = match axis {
                NormalizeAxis::ByTruth => cm.support(i),
                NormalizeAxis::ByPrediction => cm.predicted(j),
            };
            if denom > 0 {
                out[i][j] = cm.counts[i][j] as f64 / denom as f64;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub per_class: BTreeMap<Class, ClassMetrics>,
    pub accuracy: f64,
    /// Mean of the three per-class sensitivities (an absent class counts as 0).
    pub balanced_accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn ratio(num: u64, denom: u64, what: &str, class: Class, warnings: &mut Vec<String>) -> f64 {
    if denom == 0 {
        warnings.push(format!("{what} of {class} undefined (zero denominator); reported as 0"));
        0.0
    } else {
        num as f64 / denom as f64
    }
}

/// One-vs-rest sensitivity, specificity, precision and F1 per class, plus
/// accuracy and balanced accuracy.
pub fn class_metrics(cm: &ConfusionMatrix) -> ClassificationMetrics {
    let total = cm.total();
    let mut warnings = Vec::new();
    let mut per_class = BTreeMap::new();
    for class in CLASS_ORDER {
        let i = class.index();
        let tp = cm.counts[i][i];
        let fn_ = cm.support(i) - tp;
        let fp = cm.predicted(i) - tp;
        let tn = total - tp - fn_ - fp;
        let sensitivity = ratio(tp, tp + fn_, "sensitivity", class, &mut warnings);
        let specificity = ratio(tn, tn + fp, "specificity", class, &mut warnings);
        let precision = ratio(tp, tp + fp, "precision", class, &mut warnings);
        let f1 = if precision + sensitivity > 0.0 {
            2.0 * precision * sensitivity / (precision + sensitivity)
        } else {
            0.0
        };
        per_class.insert(
            class,
            ClassMetrics {
                sensitivity,
                specificity,
                precision,
                f1,
                support: tp + fn_,
            },
        );
    }
    let balanced_accuracy = per_class.values().map(|m| m.sensitivity).sum::<f64>() / NUM_CLASSES as f64;
    let accuracy = if total == 0 {
        warnings.push("accuracy undefined on an empty matrix; reported as 0".into());
        0.0
    } else {
        cm.trace() as f64 / total as f64
    };
    ClassificationMetrics {
        per_class,
        accuracy,
        balanced_accuracy,
        warnings,
    }
}
