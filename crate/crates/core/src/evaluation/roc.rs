use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::class::{Class, CLASS_ORDER, NUM_CLASSES};
use crate::error::{Error, Result};

pub const ROC_GRID_POINTS: usize = 101;

/// One-vs-rest ROC curve. Point 0 is (0, 0) at a threshold above every score;
/// each further point admits all samples scoring at least `thresholds[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub auc: f64,
    pub positives: u64,
    pub negatives: u64,
}

impl RocCurve {
    /// Piecewise-linear TPR at `x`; on vertical segments the highest TPR wins.
    pub fn tpr_at(&self, x: f64) -> f64 {
        let i = self.fpr.partition_point(|&f| f <= x);
        if i == 0 {
            return self.tpr[0];
        }
        let lo = i - 1;
        if lo + 1 == self.fpr.len() {
            return self.tpr[lo];
        }
        let (x0, x1) = (self.fpr[lo], self.fpr[lo + 1]);
        let (y0, y1) = (self.tpr[lo], self.tpr[lo + 1]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Threshold sweep over `scores`. `None` when either class is empty.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    assert_eq!(scores.len(), positive.len());
    let p = positive.iter().filter(|&&b| b).count() as u64;
    let n = positive.len() as u64 - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let top = scores[order[0]];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let mut thresholds = vec![top + 1.0];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        // admit the whole tie group at once
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        fpr.push(fp as f64 / n as f64);
        tpr.push(tp as f64 / p as f64);
        thresholds.push(s);
    }
    let auc = trapezoid(&fpr, &tpr);
    Some(RocCurve {
        fpr,
        tpr,
        thresholds,
        auc,
        positives: p,
        negatives: n,
    })
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassRocs {
    /// `None` marks a class whose curve is undefined on this data.
    pub curves: BTreeMap<Class, Option<RocCurve>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// One-vs-rest curves for every class from per-frame probability vectors.
pub fn roc_per_class(probabilities: &[Vec<f64>], truth: &[Class]) -> Result<ClassRocs> {
    if probabilities.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} score vectors for {} labels",
            probabilities.len(),
            truth.len()
        )));
    }
    if let Some(bad) = probabilities.iter().find(|p| p.len() != NUM_CLASSES || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Validation(format!("invalid probability vector {bad:?}")));
    }
    let mut out = ClassRocs::default();
    for class in CLASS_ORDER {
        let scores: Vec<f64> = probabilities.iter().map(|p| p[class.index()]).collect();
        let positive: Vec<bool> = truth.iter().map(|&t| t == class).collect();
        let curve = roc_curve(&scores, &positive);
        if curve.is_none() {
            out.warnings.push(format!("ROC for {class} undefined: needs both positive and negative samples"));
        }
        out.curves.insert(class, curve);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub accuracy: f64,
}

/// Vertical average of several folds' curves on a fixed FPR grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocBand {
    pub fpr_grid: Vec<f64>,
    pub mean_tpr: Vec<f64>,
    pub std_tpr: Vec<f64>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub folds: usize,
    /// Grid point of the mean curve with the highest one-vs-rest accuracy.
    pub best_accuracy: OperatingPoint,
}

pub fn fpr_grid() -> Vec<f64> {
    (0..ROC_GRID_POINTS).map(|i| i as f64 / (ROC_GRID_POINTS - 1) as f64).collect()
}

/// Mean and population std. Shifting by the first sample keeps identical
/// inputs exact (std exactly 0).
pub(crate) fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut it = values.clone();
    let Some(first) = it.next() else { return (0.0, 0.0) };
    let n = values.clone().count() as f64;
    let mean = first + values.clone().map(|v| v - first).sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Needs at least two curves. Standard deviations are population (1/n).
pub fn roc_cross_fold(curves: &[&RocCurve]) -> Result<RocBand> {
    if curves.len() < 2 {
        return Err(Error::Validation(format!(
            "cross-fold ROC needs at least 2 defined curves, got {}",
            curves.len()
        )));
    }
    let grid = fpr_grid();
    let mut mean_tpr = Vec::with_capacity(grid.len());
    let mut std_tpr = Vec::with_capacity(grid.len());
    for &x in &grid {
        let (m, s) = mean_std(curves.iter().map(|c| c.tpr_at(x)));
        mean_tpr.push(m);
        std_tpr.push(s);
    }
    let (auc_mean, auc_std) = mean_std(curves.iter().map(|c| c.auc));

    let pos: f64 = curves.iter().map(|c| c.positives as f64).sum();
    let neg: f64 = curves.iter().map(|c| c.negatives as f64).sum();
    let mut best = OperatingPoint {
        fpr: 0.0,
        tpr: 0.0,
        accuracy: f64::NEG_INFINITY,
    };
    for (&f, &t) in grid.iter().zip(&mean_tpr) {
        let accuracy = (t * pos + (1.0 - f) * neg) / (pos + neg);
        if accuracy > best.accuracy {
            best = OperatingPoint { fpr: f, tpr: t, accuracy };
        }
    }
    Ok(RocBand {
        fpr_grid: grid,
        mean_tpr,
        std_tpr,
        auc_mean,
        auc_std,
        folds: curves.len(),
        best_accuracy: best,
    })
}
