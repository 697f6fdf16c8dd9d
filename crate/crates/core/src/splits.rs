//! Video-disjoint, class-balanced k-fold partition.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::class::{Class, CLASS_ORDER};
use crate::error::{Error, IoContext, Result};
use crate::ingest::{ClassCounts, DatasetManifest, FrameRef};
use crate::provenance::Provenance;

/// Assignment of every video to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
    /// Per fold, per class video and frame counts.
    pub stats: Vec<BTreeMap<Class, ClassCounts>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Train and test frames of one fold.
#[derive(Debug, Clone)]
pub struct FoldView<'m> {
    pub fold: usize,
    pub train: Vec<&'m FrameRef>,
    pub test: Vec<&'m FrameRef>,
}

/// Partitions the manifest's videos into `k` folds.
///
/// Per class, videos are taken largest-first (by frame count) and each goes to
/// the fold currently holding the fewest frames of that class, ties going to
/// the lower fold index. The seed only permutes videos of equal frame count.
/// For every class the resulting spread between the heaviest and the lightest
/// fold never exceeds the class's largest single video.
pub fn assign_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Validation(format!("k must be >= 2, got {k}")));
    }
    if manifest.videos.is_empty() {
        return Err(Error::Validation("cannot split an empty manifest".into()));
    }
    let frame_counts = manifest.frames_per_video();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    let mut warnings = Vec::new();

    for class in CLASS_ORDER {
        let mut videos: Vec<(&str, usize)> = manifest
            .videos
            .iter()
            .filter(|v| v.label == class)
            .map(|v| (v.id.as_str(), frame_counts[v.id.as_str()]))
            .collect();
        if videos.is_empty() {
            warnings.push(format!("class {class} has no videos"));
            continue;
        }
        if videos.len() < k {
            warnings.push(format!(
                "class {class} has {} videos for {k} folds; some folds will lack it",
                videos.len()
            ));
        }
        videos.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        for run in videos.chunk_by_mut(|a, b| a.1 == b.1) {
            run.shuffle(&mut rng);
        }

        let mut load = vec![0usize; k];
        for (id, frames) in videos {
            let lightest = (0..k).min_by_key(|&f| (load[f], f)).expect("k >= 2");
            load[lightest] += frames;
            assignment.insert(id.to_string(), lightest);
        }
    }

    let stats = fold_stats(manifest, &assignment, k);
    Ok(FoldPlan {
        k,
        seed,
        assignment,
        stats,
        warnings,
        provenance: None,
    })
}

fn fold_stats(
    manifest: &DatasetManifest,
    assignment: &BTreeMap<String, usize>,
    k: usize,
) -> Vec<BTreeMap<Class, ClassCounts>> {
    let mut stats: Vec<BTreeMap<Class, ClassCounts>> = (0..k)
        .map(|_| CLASS_ORDER.iter().map(|c| (*c, ClassCounts::default())).collect())
        .collect();
    for v in &manifest.videos {
        if let Some(&f) = assignment.get(&v.id) {
            stats[f].get_mut(&v.label).expect("class present").videos += 1;
        }
    }
    for fr in &manifest.frames {
        if let Some(&f) = assignment.get(&fr.video_id) {
            stats[f].get_mut(&fr.label).expect("class present").frames += 1;
        }
    }
    stats
}

/// Frames of videos assigned to `fold` form the test set; all others train.
pub fn fold_views<'m>(plan: &FoldPlan, manifest: &'m DatasetManifest, fold: usize) -> Result<FoldView<'m>> {
    if fold >= plan.k {
        return Err(Error::Validation(format!("fold {fold} out of range for k={}", plan.k)));
    }
    let mut view = FoldView {
        fold,
        train: Vec::new(),
        test: Vec::new(),
    };
    for frame in &manifest.frames {
        let assigned = plan.assignment.get(&frame.video_id).ok_or_else(|| {
            Error::Validation(format!("video {} is not in the fold plan", frame.video_id))
        })?;
        if *assigned == fold {
            view.test.push(frame);
        } else {
            view.train.push(frame);
        }
    }
    Ok(view)
}

impl FoldPlan {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).at(parent)?;
        }
        std::fs::write(path, self.to_json()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Frames of `class` per fold.
    pub fn class_frames(&self, class: Class) -> Vec<usize> {
        self.stats.iter().map(|s| s[&class].frames).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ExtractionParams, MediaKind, Probe, VideoRecord};

    pub(crate) fn manifest_from(videos: &[(&str, Class, usize)]) -> DatasetManifest {
        let records = videos
            .iter()
            .map(|(id, label, _)| VideoRecord {
                id: id.to_string(),
                label: *label,
                media: MediaKind::Video,
                file: format!("{label}/{id}.gif"),
                source_url: String::new(),
                probe: Probe::Convex,
                native_fps: 10.0,
                duration: 10.0,
                crop_window: None,
                expert_notes: String::new(),
            })
            .collect();
        let frames = videos
            .iter()
            .flat_map(|(id, label, n)| {
                (0..*n).map(move |k| FrameRef {
                    video_id: id.to_string(),
                    frame_index: k,
                    label: *label,
                    file: format!("{label}/{id}_frame{k}.png"),
                    time: k as f64 / 3.0,
                })
            })
            .collect();
        DatasetManifest::new(records, frames, ExtractionParams::default())
    }

    #[test]
    fn pigeonhole_one_video_per_fold() {
        let m = manifest_from(&[
            ("a", Class::Covid19, 7),
            ("b", Class::Covid19, 7),
            ("c", Class::Covid19, 3),
            ("d", Class::Covid19, 9),
            ("e", Class::Covid19, 1),
        ]);
        let plan = assign_folds(&m, 5, 1).unwrap();
        let mut folds: Vec<usize> = plan.assignment.values().copied().collect();
        folds.sort();
        assert_eq!(folds, vec![0, 1, 2, 3, 4]);
    }

    /// Smallest achievable spread over every 2-partition.
    fn best_two_way_spread(counts: &[usize]) -> usize {
        let total: usize = counts.iter().sum();
        (0u32..1 << counts.len())
            .map(|mask| {
                let a: usize = counts.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, c)| c).sum();
                a.abs_diff(total - a)
            })
            .min()
            .unwrap()
    }

    #[test]
    fn greedy_reaches_balanced_optimum() {
        let counts = [30, 30, 20, 20, 10, 10];
        assert_eq!(best_two_way_spread(&counts), 0);
        let videos: Vec<(String, Class, usize)> = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| (format!("v{i}"), Class::Pneumonia, n))
            .collect();
        let borrowed: Vec<(&str, Class, usize)> = videos.iter().map(|(id, c, n)| (id.as_str(), *c, *n)).collect();
        let m = manifest_from(&borrowed);
        for seed in 0..10 {
            let plan = assign_folds(&m, 2, seed).unwrap();
            assert_eq!(plan.class_frames(Class::Pneumonia), vec![60, 60]);
        }
    }

    #[test]
    fn minimal_two_video_split() {
        let m = manifest_from(&[("A", Class::Healthy, 4), ("B", Class::Healthy, 2)]);
        let plan = assign_folds(&m, 2, 0).unwrap();
        let v0 = fold_views(&plan, &m, 0).unwrap();
        let v1 = fold_views(&plan, &m, 1).unwrap();
        assert!(v0.test.iter().all(|f| f.video_id == "A") && v0.train.iter().all(|f| f.video_id == "B"));
        assert_eq!(v1.test.len(), 2);
        assert!(matches!(fold_views(&plan, &m, 2), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_class_warns() {
        let m = manifest_from(&[("a", Class::Covid19, 3), ("b", Class::Covid19, 3)]);
        let plan = assign_folds(&m, 2, 0).unwrap();
        assert!(plan.warnings.iter().any(|w| w.contains("pneumonia")));
        assert!(plan.warnings.iter().any(|w| w.contains("healthy")));
    }

    #[test]
    fn bad_arguments() {
        let m = manifest_from(&[("a", Class::Covid19, 3)]);
        assert!(assign_folds(&m, 1, 0).is_err());
        assert!(assign_folds(&manifest_from(&[]), 5, 0).is_err());
    }

    #[test]
    fn seed_only_permutes_ties() {
        let m = manifest_from(&[
            ("a", Class::Covid19, 5),
            ("b", Class::Covid19, 5),
            ("c", Class::Covid19, 5),
            ("d", Class::Covid19, 9),
        ]);
        let plans: Vec<FoldPlan> = (0..20).map(|s| assign_folds(&m, 2, s).unwrap()).collect();
        // the unique largest video always opens fold 0
        assert!(plans.iter().all(|p| p.assignment["d"] == 0));
        assert!(plans.iter().any(|p| p.assignment != plans[0].assignment));
    }
}
