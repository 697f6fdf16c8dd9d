use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GenericImageView};
use lusnet_core::evaluation::{mean_probabilities, AggregationMethod};
use lusnet_core::ingest::{
    crop_quadratic, extract_frames, prepare_input, CropWindow, ExtractionParams, MediaKind, PreparedImage, Probe,
    VideoRecord, VideoSource,
};
use lusnet_core::model::TrainedModelBundle;
use lusnet_core::{argmax_with_priority, Class, CLASS_ORDER, NUM_CLASSES};
use ndarray::Axis;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ApiError, ServiceError};
use crate::media::{self, Decoded};
use crate::API_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberOutput {
    pub fold: usize,
    /// Probabilities in class order (covid19, pneumonia, healthy).
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub version: String,
    pub class_probs: BTreeMap<Class, f64>,
    pub predicted: Class,
    /// Largest entry of `class_probs`.
    pub confidence: f64,
    pub per_model: Vec<MemberOutput>,
    pub model_version: String,
    pub media: MediaKind,
    /// Frames classified (1 for still images).
    pub frames: usize,
    /// Frame-level aggregation applied to video uploads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<AggregationMethod>,
}

struct Member {
    bundle: TrainedModelBundle,
    /// `reorder[c]` = index in the bundle's output for `CLASS_ORDER[c]`.
    reorder: [usize; NUM_CLASSES],
}

/// Immutable set of fold models whose softmax outputs are averaged.
pub struct Ensemble {
    members: Vec<Member>,
    model_version: String,
    input_side: u32,
    /// All members share the same frozen prefix, so it is computed once.
    shared_prefix: bool,
}

impl std::fmt::Debug for Ensemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ensemble")
            .field("folds", &self.folds())
            .field("model_version", &self.model_version)
            .finish()
    }
}

impl Ensemble {
    pub fn from_bundles(bundles: Vec<TrainedModelBundle>) -> Result<Ensemble, ServiceError> {
        Self::from_labelled(bundles.into_iter().map(|b| (format!("fold {}", b.fold), b)).collect())
    }

    fn from_labelled(bundles: Vec<(String, TrainedModelBundle)>) -> Result<Ensemble, ServiceError> {
        let Some((first_name, first)) = bundles.first() else {
            return Err(ServiceError::NoModels(PathBuf::new()));
        };
        let order = first.class_order.clone();
        let offenders: Vec<String> = bundles
            .iter()
            .filter(|(_, b)| b.class_order != order)
            .map(|(name, b)| format!("{name} has {:?}", b.class_order))
            .collect();
        if !offenders.is_empty() {
            return Err(ServiceError::ClassOrder(format!(
                "{first_name} has {order:?} but {}",
                offenders.join(", ")
            )));
        }
        if order.len() != NUM_CLASSES {
            return Err(ServiceError::ClassOrder(format!("{first_name}: expected {NUM_CLASSES} classes, got {order:?}")));
        }
        let mut reorder = [0; NUM_CLASSES];
        for (c, class) in CLASS_ORDER.iter().enumerate() {
            reorder[c] = order.iter().position(|o| o == class).ok_or_else(|| {
                ServiceError::ClassOrder(format!("{first_name}: class order {order:?} lacks {class}"))
            })?;
        }

        let input_side = first.config().input_side;
        if let Some((name, b)) = bundles.iter().find(|(_, b)| b.config().input_side != input_side) {
            return Err(ServiceError::Config(format!(
                "{name} expects {}px input, {first_name} {input_side}px",
                b.config().input_side
            )));
        }
        let key = |b: &TrainedModelBundle| (b.network.first_trainable_conv(), b.frozen_digest.clone());
        let shared_prefix = bundles.iter().all(|(_, b)| key(b) == key(first));

        let mut hasher = Sha256::new();
        for (_, b) in &bundles {
            hasher.update(format!("{}:{}:{};", b.fold, b.frozen_digest, b.network.trained_digest()));
        }
        let model_version = hex::encode(hasher.finalize())[..16].to_string();

        Ok(Ensemble {
            members: bundles.into_iter().map(|(_, bundle)| Member { bundle, reorder }).collect(),
            model_version,
            input_side,
            shared_prefix,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn folds(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.bundle.fold).collect()
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn input_side(&self) -> u32 {
        self.input_side
    }

    /// Per-member probability vectors (class order) for one prepared frame.
    pub fn member_probabilities(&self, image: &PreparedImage) -> lusnet_core::Result<Vec<Vec<f64>>> {
        let shared = if self.shared_prefix {
            Some(self.members[0].bundle.network.prefix(image)?)
        } else {
            None
        };
        self.members
            .iter()
            .map(|m| {
                let net = &m.bundle.network;
                let prefix = match &shared {
                    Some(p) => p.clone(),
                    None => net.prefix(image)?,
                };
                let features = net.pooled_features(prefix).insert_axis(Axis(0));
                let raw = net.probabilities(features.view()).row(0).to_vec();
                Ok(m.reorder.iter().map(|&i| raw[i]).collect())
            })
            .collect()
    }

    /// Ensemble prediction over one or more frames of the same upload. Each
    /// member's frame probabilities are averaged (the mean-probability video
    /// rule), then the members are averaged.
    pub fn predict_frames(&self, frames: &[PreparedImage], media: MediaKind) -> lusnet_core::Result<PredictionResult> {
        if frames.is_empty() {
            return Err(lusnet_core::Error::Validation("nothing to classify".into()));
        }
        let mut per_member: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(frames.len()); self.members.len()];
        for frame in frames {
            for (slot, probs) in per_member.iter_mut().zip(self.member_probabilities(frame)?) {
                slot.push(probs);
            }
        }
        let per_model: Vec<MemberOutput> = per_member
            .iter()
            .zip(&self.members)
            .map(|(probs, m)| {
                Ok(MemberOutput {
                    fold: m.bundle.fold,
                    probabilities: mean_probabilities(probs)?,
                })
            })
            .collect::<lusnet_core::Result<_>>()?;
        let outputs: Vec<Vec<f64>> = per_model.iter().map(|m| m.probabilities.clone()).collect();
        let mean = mean_probabilities(&outputs)?;
        let predicted = Class::from_index(argmax_with_priority(&mean)).expect("three classes");
        Ok(PredictionResult {
            version: API_VERSION.to_string(),
            confidence: mean[predicted.index()],
            class_probs: CLASS_ORDER.iter().map(|&c| (c, mean[c.index()])).collect(),
            predicted,
            per_model,
            model_version: self.model_version.clone(),
            media,
            frames: frames.len(),
            aggregation: (media == MediaKind::Video).then_some(AggregationMethod::MeanProb),
        })
    }

    /// Crops (explicit window, or the centred square when none is given),
    /// resizes and normalizes one decoded frame.
    pub fn prepare(&self, image: &DynamicImage, crop: Option<CropWindow>) -> lusnet_core::Result<PreparedImage> {
        let square = match crop {
            Some(window) => crop_quadratic(image, window)?,
            None => centre_square(image),
        };
        prepare_input(&square, self.input_side)
    }

    /// Decodes an uploaded image or recording and classifies it.
    pub fn predict_upload(&self, bytes: &[u8], crop: Option<CropWindow>) -> Result<PredictionResult, ApiError> {
        let (_, decoded) = media::decode(bytes)?;
        match decoded {
            Decoded::Image(img) => {
                let prepared = self.prepare(&img, crop)?;
                Ok(self.predict_frames(&[prepared], MediaKind::Image)?)
            }
            Decoded::Video(mut source) => {
                let frames = video_frames(source.as_mut(), crop)?;
                let prepared: Vec<PreparedImage> =
                    frames.iter().map(|f| self.prepare(f, None)).collect::<lusnet_core::Result<_>>()?;
                Ok(self.predict_frames(&prepared, MediaKind::Video)?)
            }
        }
    }
}

/// Frames on the standard sampling grid, cropped when a window is given.
fn video_frames(source: &mut (dyn VideoSource + Send), crop: Option<CropWindow>) -> lusnet_core::Result<Vec<DynamicImage>> {
    let info = source.info().clone();
    let record = VideoRecord {
        id: "upload".into(),
        label: Class::Covid19,
        media: MediaKind::Video,
        file: "upload".into(),
        source_url: String::new(),
        probe: Probe::Convex,
        native_fps: info.fps,
        duration: info.duration,
        crop_window: crop,
        expert_notes: String::new(),
    };
    Ok(extract_frames(&record, source, &ExtractionParams::default())?
        .into_iter()
        .map(|f| f.image)
        .collect())
}

fn centre_square(image: &DynamicImage) -> DynamicImage {
    let (w, h) = image.dimensions();
    if w == h {
        return image.clone();
    }
    let side = w.min(h);
    image.crop_imm((w - side) / 2, (h - side) / 2, side, side)
}

/// Loads every bundle below `model_dir` (the directory itself, or its
/// immediate subdirectories in name order).
pub fn load_ensemble(model_dir: &Path) -> Result<Ensemble, ServiceError> {
    let mut dirs = Vec::new();
    if TrainedModelBundle::is_bundle_dir(model_dir) {
        dirs.push(model_dir.to_path_buf());
    } else {
        let entries = std::fs::read_dir(model_dir).map_err(|source| ServiceError::Io {
            path: model_dir.to_path_buf(),
            source,
        })?;
        for entry in entries {
            let path = entry
                .map_err(|source| ServiceError::Io {
                    path: model_dir.to_path_buf(),
                    source,
                })?
                .path();
            if TrainedModelBundle::is_bundle_dir(&path) {
                dirs.push(path);
            }
        }
        dirs.sort();
    }
    if dirs.is_empty() {
        return Err(ServiceError::NoModels(model_dir.to_path_buf()));
    }
    let mut bundles = Vec::new();
    for dir in dirs {
        log::info!("loading model bundle {}", dir.display());
        let bundle = TrainedModelBundle::load(&dir)?;
        bundles.push((dir.display().to_string(), bundle));
    }
    Ensemble::from_labelled(bundles)
}
