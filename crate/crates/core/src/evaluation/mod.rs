//! Frame- and video-level metrics for a cross-validation run.

mod aggregate;
mod confusion;
mod roc;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::class::{argmax_with_priority, Class, CLASS_ORDER};
use crate::error::{Error, IoContext, Result};
use crate::provenance::Provenance;

pub use aggregate::{aggregate_video, mean_probabilities, AggregationMethod};
pub use confusion::{
    class_metrics, confusion, confusion_from_indices, normalize, ClassMetrics, ClassificationMetrics,
    ConfusionMatrix, NormalizeAxis,
};
pub use roc::{
    fpr_grid, roc_cross_fold, roc_curve, roc_per_class, trapezoid, ClassRocs, OperatingPoint, RocBand, RocCurve,
    ROC_GRID_POINTS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub video_id: String,
    pub frame_index: usize,
    pub truth: Class,
    pub probabilities: Vec<f64>,
}

impl FramePrediction {
    pub fn predicted(&self) -> Class {
        Class::from_index(argmax_with_priority(&self.probabilities)).expect("three class scores")
    }
}

/// Test-split predictions of one fold's model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPredictions {
    pub fold: usize,
    pub frames: Vec<FramePrediction>,
}

/// A confusion matrix in absolute counts and both normalizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSet {
    pub absolute: ConfusionMatrix,
    pub by_truth: [[f64; 3]; 3],
    pub by_prediction: [[f64; 3]; 3],
}

impl From<ConfusionMatrix> for MatrixSet {
    fn from(cm: ConfusionMatrix) -> Self {
        MatrixSet {
            by_truth: normalize(&cm, NormalizeAxis::ByTruth),
            by_prediction: normalize(&cm, NormalizeAxis::ByPrediction),
            absolute: cm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub frames: usize,
    pub videos: usize,
    pub confusion: MatrixSet,
    pub metrics: ClassificationMetrics,
    pub roc: ClassRocs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Spread {
        let (mean, std) = roc::mean_std(values.iter().copied());
        Spread { mean, std }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassSpread {
    pub sensitivity: Spread,
    pub specificity: Spread,
    pub precision: Spread,
    pub f1: Spread,
}

/// Per-fold metrics averaged across folds (population std).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldAverage {
    pub per_class: BTreeMap<Class, ClassSpread>,
    pub accuracy: Spread,
    pub balanced_accuracy: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledReport {
    pub confusion: MatrixSet,
    pub metrics: ClassificationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub video_id: String,
    pub fold: usize,
    pub truth: Class,
    pub frames: usize,
    pub mean_probabilities: Vec<f64>,
    pub majority: Class,
    pub mean_prob: Class,
}

impl VideoResult {
    pub fn predicted(&self, method: AggregationMethod) -> Class {
        match method {
            AggregationMethod::Majority => self.majority,
            AggregationMethod::MeanProb => self.mean_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoLevel {
    pub method: AggregationMethod,
    pub confusion: MatrixSet,
    pub metrics: ClassificationMetrics,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub frames: usize,
    pub videos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub folds: Vec<FoldReport>,
    /// All test predictions concatenated.
    pub pooled: PooledReport,
    pub fold_average: FoldAverage,
    /// `None` where fewer than two folds have a defined curve.
    pub roc_bands: BTreeMap<Class, Option<RocBand>>,
    pub videos: Vec<VideoResult>,
    pub video_level: Vec<VideoLevel>,
    pub support: BTreeMap<Class, Support>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

fn metrics_for(frames: &[&FramePrediction]) -> Result<(ConfusionMatrix, ClassificationMetrics)> {
    let preds: Vec<Class> = frames.iter().map(|f| f.predicted()).collect();
    let truth: Vec<Class> = frames.iter().map(|f| f.truth).collect();
    let cm = confusion(&preds, &truth)?;
    let metrics = class_metrics(&cm);
    Ok((cm, metrics))
}

/// Builds the full report from each fold's test predictions.
pub fn evaluate(folds: &[FoldPredictions]) -> Result<EvaluationReport> {
    if folds.is_empty() {
        return Err(Error::Validation("no fold predictions to evaluate".into()));
    }
    let mut warnings = Vec::new();
    let mut video_fold: BTreeMap<&str, usize> = BTreeMap::new();
    let mut seen_folds = BTreeSet::new();
    for fp in folds {
        if !seen_folds.insert(fp.fold) {
            return Err(Error::Validation(format!("fold {} listed twice", fp.fold)));
        }
        if fp.frames.is_empty() {
            return Err(Error::Validation(format!("fold {} has no test frames", fp.fold)));
        }
        for f in &fp.frames {
            if f.probabilities.len() != 3 || f.probabilities.iter().any(|p| !p.is_finite()) {
                return Err(Error::Validation(format!(
                    "{} frame {}: invalid probabilities {:?}",
                    f.video_id, f.frame_index, f.probabilities
                )));
            }
            if let Some(&other) = video_fold.get(f.video_id.as_str()) {
                if other != fp.fold {
                    return Err(Error::Validation(format!(
                        "video {} appears in test folds {other} and {}",
                        f.video_id, fp.fold
                    )));
                }
            }
            video_fold.insert(&f.video_id, fp.fold);
        }
    }

    let mut fold_reports = Vec::new();
    for fp in folds {
        let frames: Vec<&FramePrediction> = fp.frames.iter().collect();
        let (cm, metrics) = metrics_for(&frames)?;
        for w in &metrics.warnings {
            warnings.push(format!("fold {}: {w}", fp.fold));
        }
        let probs: Vec<Vec<f64>> = fp.frames.iter().map(|f| f.probabilities.clone()).collect();
        let truth: Vec<Class> = fp.frames.iter().map(|f| f.truth).collect();
        let roc = roc_per_class(&probs, &truth)?;
        for w in &roc.warnings {
            warnings.push(format!("fold {}: {w}", fp.fold));
        }
        let videos: BTreeSet<&str> = fp.frames.iter().map(|f| f.video_id.as_str()).collect();
        fold_reports.push(FoldReport {
            fold: fp.fold,
            frames: fp.frames.len(),
            videos: videos.len(),
            confusion: cm.into(),
            metrics,
            roc,
        });
    }

    let all: Vec<&FramePrediction> = folds.iter().flat_map(|f| &f.frames).collect();
    let (pooled_cm, pooled_metrics) = metrics_for(&all)?;

    let mut fold_average = FoldAverage::default();
    let collect = |f: &dyn Fn(&FoldReport) -> f64| Spread::of(&fold_reports.iter().map(f).collect::<Vec<_>>());
    for class in CLASS_ORDER {
        fold_average.per_class.insert(
            class,
            ClassSpread {
                sensitivity: collect(&|r| r.metrics.per_class[&class].sensitivity),
                specificity: collect(&|r| r.metrics.per_class[&class].specificity),
                precision: collect(&|r| r.metrics.per_class[&class].precision),
                f1: collect(&|r| r.metrics.per_class[&class].f1),
            },
        );
    }
    fold_average.accuracy = collect(&|r| r.metrics.accuracy);
    fold_average.balanced_accuracy = collect(&|r| r.metrics.balanced_accuracy);

    let mut roc_bands = BTreeMap::new();
    for class in CLASS_ORDER {
        let curves: Vec<&RocCurve> = fold_reports.iter().filter_map(|r| r.roc.curves[&class].as_ref()).collect();
        let band = match roc_cross_fold(&curves) {
            Ok(b) => Some(b),
            Err(_) => {
                warnings.push(format!(
                    "ROC band for {class} omitted: {} fold(s) with a defined curve",
                    curves.len()
                ));
                None
            }
        };
        roc_bands.insert(class, band);
    }

    // video level
    let mut by_video: BTreeMap<(&str, usize), Vec<&FramePrediction>> = BTreeMap::new();
    for fp in folds {
        for f in &fp.frames {
            by_video.entry((f.video_id.as_str(), fp.fold)).or_default().push(f);
        }
    }
    let mut videos = Vec::new();
    for ((id, fold), frames) in &by_video {
        let truth = frames[0].truth;
        if frames.iter().any(|f| f.truth != truth) {
            return Err(Error::Validation(format!("video {id} has frames with differing labels")));
        }
        let probs: Vec<Vec<f64>> = frames.iter().map(|f| f.probabilities.clone()).collect();
        videos.push(VideoResult {
            video_id: id.to_string(),
            fold: *fold,
            truth,
            frames: frames.len(),
            mean_probabilities: mean_probabilities(&probs)?,
            majority: aggregate_video(&probs, AggregationMethod::Majority)?,
            mean_prob: aggregate_video(&probs, AggregationMethod::MeanProb)?,
        });
    }
    let mut video_level = Vec::new();
    for method in AggregationMethod::ALL {
        let preds: Vec<Class> = videos.iter().map(|v| v.predicted(method)).collect();
        let truth: Vec<Class> = videos.iter().map(|v| v.truth).collect();
        let cm = confusion(&preds, &truth)?;
        video_level.push(VideoLevel {
            method,
            metrics: class_metrics(&cm),
            confusion: cm.into(),
        });
    }

    let mut support: BTreeMap<Class, Support> = CLASS_ORDER.iter().map(|&c| (c, Support::default())).collect();
    for f in &all {
        support.get_mut(&f.truth).unwrap().frames += 1;
    }
    for v in &videos {
        support.get_mut(&v.truth).unwrap().videos += 1;
    }
    warnings.extend(pooled_metrics.warnings.iter().map(|w| format!("pooled: {w}")));

    Ok(EvaluationReport {
        folds: fold_reports,
        pooled: PooledReport {
            confusion: pooled_cm.into(),
            metrics: pooled_metrics,
        },
        fold_average,
        roc_bands,
        videos,
        video_level,
        support,
        warnings,
        provenance: None,
    })
}

impl EvaluationReport {
    pub fn video_metrics(&self, method: AggregationMethod) -> &ClassificationMetrics {
        &self.video_level.iter().find(|v| v.method == method).expect("both methods evaluated").metrics
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Table of pooled per-class metrics, followed by the headline numbers.
    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let m = &self.pooled.metrics;
        let _ = writeln!(md, "# Evaluation report\n");
        let _ = writeln!(
            md,
            "Pooled over {} fold(s). Acc.: {:.3}, Bal. Acc.: {:.3}\n",
            self.folds.len(),
            m.accuracy,
            m.balanced_accuracy
        );
        let _ = writeln!(md, "| Class | Sensitivity | Specificity | Precision | F1-score | Frames | Videos |");
        let _ = writeln!(md, "|---|---|---|---|---|---|---|");
        for class in CLASS_ORDER {
            let c = &m.per_class[&class];
            let s = &self.support[&class];
            let _ = writeln!(
                md,
                "| {class} | {:.3} | {:.3} | {:.3} | {:.3} | {} | {} |",
                c.sensitivity, c.specificity, c.precision, c.f1, s.frames, s.videos
            );
        }

        let _ = writeln!(md, "\n## Fold average (mean ± std)\n");
        let _ = writeln!(md, "| Class | Sensitivity | Specificity | Precision | F1-score |");
        let _ = writeln!(md, "|---|---|---|---|---|");
        let fa = &self.fold_average;
        for class in CLASS_ORDER {
            let c = &fa.per_class[&class];
            let _ = writeln!(
                md,
                "| {class} | {:.3} ± {:.3} | {:.3} ± {:.3} | {:.3} ± {:.3} | {:.3} ± {:.3} |",
                c.sensitivity.mean,
                c.sensitivity.std,
                c.specificity.mean,
                c.specificity.std,
                c.precision.mean,
                c.precision.std,
                c.f1.mean,
                c.f1.std
            );
        }
        let _ = writeln!(
            md,
            "\nAcc.: {:.3} ± {:.3}, Bal. Acc.: {:.3} ± {:.3}",
            fa.accuracy.mean, fa.accuracy.std, fa.balanced_accuracy.mean, fa.balanced_accuracy.std
        );

        let _ = writeln!(md, "\n## ROC-AUC\n");
        for class in CLASS_ORDER {
            match &self.roc_bands[&class] {
                Some(b) => {
                    let _ = writeln!(md, "- {class}: {:.3} ± {:.3} over {} folds", b.auc_mean, b.auc_std, b.folds);
                }
                None => {
                    let _ = writeln!(md, "- {class}: undefined");
                }
            }
        }

        let _ = writeln!(md, "\n## Video level\n");
        for v in &self.video_level {
            let _ = writeln!(
                md,
                "- {}: Acc. {:.3}, Bal. Acc. {:.3} ({} videos)",
                v.method,
                v.metrics.accuracy,
                v.metrics.balanced_accuracy,
                v.confusion.absolute.total()
            );
        }

        let _ = writeln!(md, "\n## Confusion matrix (rows: truth, columns: prediction)\n");
        let _ = writeln!(md, "| | covid19 | pneumonia | healthy |");
        let _ = writeln!(md, "|---|---|---|---|");
        for class in CLASS_ORDER {
            let row = &self.pooled.confusion.absolute.counts[class.index()];
            let _ = writeln!(md, "| {class} | {} | {} | {} |", row[0], row[1], row[2]);
        }

        if !self.warnings.is_empty() {
            let _ = writeln!(md, "\n## Warnings\n");
            for w in &self.warnings {
                let _ = writeln!(md, "- {w}");
            }
        }
        if let Some(p) = &self.provenance {
            let _ = writeln!(md, "\n_{} · config {}_", p.command, p.config_hash);
        }
        md
    }

    /// Writes `roc_<class>_fold<k>.csv` for every defined curve and
    /// `roc_<class>_mean.csv` for every band. Returns the files written.
    pub fn write_roc_csvs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).at(dir)?;
        let mut written = Vec::new();
        for fold in &self.folds {
            for (class, curve) in &fold.roc.curves {
                let Some(curve) = curve else { continue };
                let path = dir.join(format!("roc_{class}_fold{}.csv", fold.fold));
                std::fs::write(&path, curve_csv(curve)).at(&path)?;
                written.push(path);
            }
        }
        for (class, band) in &self.roc_bands {
            let Some(band) = band else { continue };
            let mut csv = String::from("fpr,mean_tpr,std_tpr\n");
            for i in 0..band.fpr_grid.len() {
                let _ = writeln!(csv, "{},{},{}", band.fpr_grid[i], band.mean_tpr[i], band.std_tpr[i]);
            }
            let path = dir.join(format!("roc_{class}_mean.csv"));
            std::fs::write(&path, csv).at(&path)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn curve_csv(curve: &RocCurve) -> String {
    let mut csv = String::from("threshold,fpr,tpr\n");
    for i in 0..curve.fpr.len() {
        let _ = writeln!(csv, "{},{},{}", curve.thresholds[i], curve.fpr[i], curve.tpr[i]);
    }
    csv
}
