use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::augment;
use super::head::softmax_cross_entropy;
use super::network::Network;
use super::{build_model, Adam, AugmentationSpec, ModelConfig, TrainedModelBundle};
use crate::class::{argmax_with_priority, CLASS_ORDER, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::ingest::{prepare_input, DatasetManifest, FrameRef, PreparedImage};
use crate::splits::{fold_views, FoldPlan};

/// Supplies prepared pixels for manifest frames.
pub trait FrameProvider {
    fn load(&self, frame: &FrameRef, side: u32) -> Result<PreparedImage>;
}

/// Reads frames from `frames/<class>/<video>_frame<k>.png`.
pub struct DiskFrames {
    pub dir: PathBuf,
}

impl DiskFrames {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DiskFrames { dir: dir.into() }
    }
}

impl FrameProvider for DiskFrames {
    fn load(&self, frame: &FrameRef, side: u32) -> Result<PreparedImage> {
        let path = self.dir.join(&frame.file);
        let image = image::open(&path).map_err(|e| Error::Ingestion {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        prepare_input(&image, side)
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Arc<PreparedImage>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    #[serde(default)]
    pub val_loss: Option<f64>,
    #[serde(default)]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    /// Sum of per-sample losses.
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
}

/// Mini-batch gradient steps on the trainable part of a network.
pub struct Trainer<'n> {
    net: &'n mut Network,
    adam: Adam,
    rng: ChaCha8Rng,
    augmentation: AugmentationSpec,
    class_weights: Option<Vec<f32>>,
}

impl<'n> Trainer<'n> {
    pub fn new(net: &'n mut Network, seed: u64) -> Self {
        let config = net.config().clone();
        Trainer {
            net,
            adam: Adam::new(config.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(seed),
            augmentation: config.augmentation,
            class_weights: None,
        }
    }

    /// Per-class loss weights (indexed by class).
    pub fn with_class_weights(mut self, weights: Vec<f32>) -> Self {
        self.class_weights = Some(weights);
        self
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    /// One Adam step on `batch`. `prefixes`, when given, are the precomputed
    /// frozen-prefix activations of the (unaugmented) samples.
    pub fn step(&mut self, batch: &[&Sample], prefixes: Option<&[&Array3<f32>]>) -> Result<StepStats> {
        if batch.is_empty() {
            return Ok(StepStats::default());
        }
        let mut features = Array2::<f32>::zeros((batch.len(), super::vgg::FEATURE_CHANNELS));
        let mut caches = Vec::with_capacity(batch.len());
        for (i, sample) in batch.iter().enumerate() {
            let prefix = match prefixes {
                Some(p) => p[i].clone(),
                None => {
                    let image = augment(&sample.image, &self.augmentation, &mut self.rng);
                    self.net.prefix(&image)?
                }
            };
            let (f, cache) = self.net.tail_forward(prefix);
            features.row_mut(i).assign(&f);
            caches.push(cache);
        }
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let weights: Option<Vec<f32>> = self
            .class_weights
            .as_ref()
            .map(|w| labels.iter().map(|&y| w[y]).collect());

        let (logits, head_cache) = self.net.head.forward_train(features, &mut self.rng);
        let (loss, grad_logits) = softmax_cross_entropy(&logits, &labels, weights.as_deref());
        let (head_grads, grad_features) = self.net.head.backward(&head_cache, &grad_logits);

        let mut grads = self.net.zero_gradients();
        for (cache, g) in caches.iter().zip(grad_features.axis_iter(Axis(0))) {
            self.net.tail_backward(cache, g, &mut grads);
        }
        grads.head = Some(head_grads);

        self.adam.begin_step();
        for (slot, (param, grad)) in self.net.trainable_tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            self.adam.update(slot, param, grad);
        }
        self.net.head.update_running_stats(&head_cache);

        let correct = logits
            .axis_iter(Axis(0))
            .zip(&labels)
            .filter(|(row, &y)| {
                let row: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
                argmax_with_priority(&row) == y
            })
            .count();
        Ok(StepStats {
            loss_sum: loss * batch.len() as f64,
            correct,
            count: batch.len(),
        })
    }
}

type Snapshot = Vec<(String, Vec<f32>)>;

fn snapshot(net: &Network) -> Snapshot {
    net.persisted_tensors()
        .into_iter()
        .map(|(name, _, values)| (name, values.to_vec()))
        .collect()
}

fn restore(net: &mut Network, snap: &Snapshot) -> Result<()> {
    for (name, values) in snap {
        net.set_tensor(name, values)?;
    }
    Ok(())
}

/// Inference-mode loss and accuracy over samples with cached prefixes.
fn evaluate(net: &Network, prefixes: &[Array3<f32>], samples: &[Sample]) -> (f64, f64) {
    let mut features = Array2::<f32>::zeros((samples.len(), super::vgg::FEATURE_CHANNELS));
    for (i, p) in prefixes.iter().enumerate() {
        features.row_mut(i).assign(&net.pooled_features(p.clone()));
    }
    let probs = net.probabilities(features.view());
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, s) in probs.axis_iter(Axis(0)).zip(samples) {
        loss -= row[s.label].max(1e-12).ln();
        if argmax_with_priority(row.as_slice().expect("row")) == s.label {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Trains for `config.epochs` epochs and keeps the weights of the epoch with
/// the lowest holdout loss (the last epoch when there is no holdout).
pub fn fit(net: &mut Network, train: &[Sample], holdout: &[Sample], seed: u64) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::DataBalance("empty training set".into()));
    }
    let config = net.config().clone();
    let cached: Option<Vec<Array3<f32>>> = if config.augmentation.is_identity() {
        Some(train.iter().map(|s| net.prefix(&s.image)).collect::<Result<_>>()?)
    } else {
        None
    };
    let holdout_prefixes: Vec<Array3<f32>> = holdout.iter().map(|s| net.prefix(&s.image)).collect::<Result<_>>()?;

    let class_weights = config.class_weighting.then(|| {
        let mut counts = vec![0usize; config.num_classes];
        for s in train {
            counts[s.label] += 1;
        }
        counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { train.len() as f32 / (config.num_classes * c) as f32 })
            .collect::<Vec<f32>>()
    });

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546);
    let mut trainer = Trainer::new(net, seed);
    if let Some(w) = class_weights {
        trainer = trainer.with_class_weights(w);
    }

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Snapshot)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = StepStats::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let prefixes: Option<Vec<&Array3<f32>>> = cached.as_ref().map(|c| chunk.iter().map(|&i| &c[i]).collect());
            let stats = trainer.step(&batch, prefixes.as_deref())?;
            total.loss_sum += stats.loss_sum;
            total.correct += stats.correct;
            total.count += stats.count;
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: total.loss_sum / total.count as f64,
            train_accuracy: total.correct as f64 / total.count as f64,
            val_loss: None,
            val_accuracy: None,
        };
        if !holdout.is_empty() {
            let (loss, acc) = evaluate(trainer.network(), &holdout_prefixes, holdout);
            record.val_loss = Some(loss);
            record.val_accuracy = Some(acc);
            if best.as_ref().map_or(true, |(b, _)| loss < *b) {
                best = Some((loss, snapshot(trainer.network())));
            }
        }
        let holdout = match (record.val_loss, record.val_accuracy) {
            (Some(l), Some(a)) => format!(", holdout loss {l:.4} acc {a:.3}"),
            _ => String::new(),
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4} acc {:.3}{holdout}",
            config.epochs,
            record.train_loss,
            record.train_accuracy
        );
        history.push(record);
    }
    drop(trainer);
    if let Some((_, snap)) = best {
        restore(net, &snap)?;
    }
    Ok(history)
}

/// Trains the model for one cross-validation fold.
///
/// The fold's training view must contain every class. A stratified
/// `validation_fraction` of it is held out for checkpoint selection. Frozen
/// backbone parameters are verified unchanged afterwards.
pub fn train_fold(
    manifest: &DatasetManifest,
    plan: &FoldPlan,
    fold: usize,
    config: &ModelConfig,
    frames: &dyn FrameProvider,
) -> Result<TrainedModelBundle> {
    config.validate()?;
    if config.num_classes != NUM_CLASSES {
        return Err(Error::Config(format!(
            "training needs num_classes = {NUM_CLASSES}, got {}",
            config.num_classes
        )));
    }
    let view = fold_views(plan, manifest, fold)?;
    let mut by_class: Vec<Vec<&FrameRef>> = vec![Vec::new(); NUM_CLASSES];
    for f in &view.train {
        by_class[f.label.index()].push(f);
    }
    let missing: Vec<&str> = CLASS_ORDER
        .iter()
        .filter(|c| by_class[c.index()].is_empty())
        .map(|c| c.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::DataBalance(format!(
            "fold {fold} training view has no frames of: {}",
            missing.join(", ")
        )));
    }

    let seed = config.seed.wrapping_mul(1_000_003).wrapping_add(fold as u64);
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x484f_4c44);
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for frames_of_class in &mut by_class {
        frames_of_class.shuffle(&mut split_rng);
        let n = frames_of_class.len();
        let held = if n < 2 {
            0
        } else {
            ((n as f64 * config.validation_fraction).round() as usize).min(n - 1)
        };
        for (i, f) in frames_of_class.iter().enumerate() {
            let sample = Sample {
                image: Arc::new(frames.load(f, config.input_side)?),
                label: f.label.index(),
            };
            if i < held {
                holdout.push(sample);
            } else {
                train.push(sample);
            }
        }
    }

    let (mut net, _) = build_model(config)?;
    let frozen_before = net.frozen_digest();
    log::info!(
        "fold {fold}: {} training / {} holdout frames",
        train.len(),
        holdout.len()
    );
    let history = fit(&mut net, &train, &holdout, seed)?;
    let frozen_after = net.frozen_digest();
    if frozen_before != frozen_after {
        return Err(Error::Bundle(format!("fold {fold}: frozen backbone parameters changed during training")));
    }
    Ok(TrainedModelBundle::new(net, fold, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ExtractionParams, MediaKind, Probe, VideoRecord};
    use crate::splits::assign_folds;
    use std::collections::HashMap;

    /// Three visually distinct textures at 32×32.
    fn texture(class: usize, variant: usize) -> PreparedImage {
        let side = 32;
        let mut data = vec![0f32; 3 * side * side];
        for y in 0..side {
            for x in 0..side {
                let v = match class {
                    0 => ((x + variant) % 4 < 2) as u8 as f32 * 2.0 - 0.5,
                    1 => (((x as f32 - 16.0).powi(2) + (y as f32 - 16.0).powi(2)) < 60.0 + variant as f32) as u8 as f32 * 2.5 - 1.0,
                    _ => ((y + variant) % 8 < 2) as u8 as f32 * 1.5 - 1.5,
                };
                for c in 0..3 {
                    data[c * side * side + y * side + x] = v;
                }
            }
        }
        PreparedImage::from_chw(side, data).unwrap()
    }

    struct InMemory(HashMap<String, PreparedImage>);

    impl FrameProvider for InMemory {
        fn load(&self, frame: &FrameRef, _side: u32) -> Result<PreparedImage> {
            Ok(self.0[&frame.file].clone())
        }
    }

    fn synthetic(videos_per_class: usize, frames_per_video: usize) -> (DatasetManifest, InMemory) {
        let mut records = Vec::new();
        let mut frames = Vec::new();
        let mut store = HashMap::new();
        for class in CLASS_ORDER {
            for v in 0..videos_per_class {
                let id = format!("{class}{v}");
                records.push(VideoRecord {
                    id: id.clone(),
                    label: class,
                    media: MediaKind::Video,
                    file: format!("{class}/{id}.gif"),
                    source_url: String::new(),
                    probe: Probe::Convex,
                    native_fps: 10.0,
                    duration: 5.0,
                    crop_window: None,
                    expert_notes: String::new(),
                });
                for k in 0..frames_per_video {
                    let file = format!("{class}/{id}_frame{k}.png");
                    store.insert(file.clone(), texture(class.index(), v * frames_per_video + k));
                    frames.push(FrameRef {
                        video_id: id.clone(),
                        frame_index: k,
                        label: class,
                        file,
                        time: k as f64 / 3.0,
                    });
                }
            }
        }
        (DatasetManifest::new(records, frames, ExtractionParams::default()), InMemory(store))
    }

    fn quick_config() -> ModelConfig {
        ModelConfig {
            input_side: 32,
            epochs: 6,
            batch_size: 8,
            learning_rate: 1e-3,
            validation_fraction: 0.0,
            augmentation: AugmentationSpec::disabled(),
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn separable_textures_are_learned_with_frozen_backbone() {
        let (manifest, store) = synthetic(2, 15);
        let plan = assign_folds(&manifest, 2, 0).unwrap();
        let config = ModelConfig {
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 16,
            ..quick_config()
        };
        let (reference, _) = build_model(&config).unwrap();
        let bundle = train_fold(&manifest, &plan, 0, &config, &store).unwrap();

        let history = &bundle.history;
        assert_eq!(history.len(), 10);
        assert!(history.last().unwrap().train_loss < history[0].train_loss, "{history:?}");

        let train = fold_views(&plan, &manifest, 0).unwrap().train;
        let correct = train
            .iter()
            .filter(|f| {
                let p = bundle.predict_frame(&store.load(f, 32).unwrap()).unwrap();
                argmax_with_priority(&p) == f.label.index()
            })
            .count();
        let accuracy = correct as f64 / train.len() as f64;
        assert!(accuracy >= 0.9, "training accuracy {accuracy}");
        assert_eq!(bundle.network.frozen_digest(), reference.frozen_digest());
        assert_ne!(bundle.network.backbone().convs[12], reference.backbone().convs[12]);
    }

    #[test]
    fn zero_learning_rate_step_changes_nothing_trainable() {
        let (manifest, store) = synthetic(1, 4);
        let config = ModelConfig {
            learning_rate: 0.0,
            ..quick_config()
        };
        let (mut net, _) = build_model(&config).unwrap();
        let before = net.clone();
        let samples: Vec<Sample> = manifest
            .frames
            .iter()
            .map(|f| Sample {
                image: Arc::new(store.load(f, 32).unwrap()),
                label: f.label.index(),
            })
            .collect();
        let batch: Vec<&Sample> = samples.iter().collect();
        Trainer::new(&mut net, 0).step(&batch, None).unwrap();
        assert_eq!(net.backbone(), before.backbone());
        let (a, b) = (net.head(), before.head());
        assert_eq!(a.dense1_w, b.dense1_w);
        assert_eq!(a.dense2_w, b.dense2_w);
        assert_eq!(a.bn_gamma, b.bn_gamma);
    }

    #[test]
    fn empty_class_in_training_view_aborts() {
        let (manifest, store) = synthetic(1, 3);
        // one video per class: the test fold takes a class's only video
        let plan = assign_folds(&manifest, 2, 0).unwrap();
        let err = train_fold(&manifest, &plan, 0, &quick_config(), &store).unwrap_err();
        assert!(matches!(err, Error::DataBalance(_)), "{err}");
    }

    #[test]
    fn best_holdout_epoch_is_restored() {
        let (manifest, store) = synthetic(2, 6);
        let config = ModelConfig {
            epochs: 5,
            learning_rate: 3e-3,
            ..quick_config()
        };
        let samples: Vec<Sample> = manifest
            .frames
            .iter()
            .map(|f| Sample {
                image: Arc::new(store.load(f, 32).unwrap()),
                label: f.label.index(),
            })
            .collect();
        let train: Vec<Sample> = samples.iter().enumerate().filter(|(i, _)| i % 4 != 0).map(|(_, s)| s.clone()).collect();
        let holdout: Vec<Sample> = samples.iter().step_by(4).cloned().collect();

        let (mut net, _) = build_model(&config).unwrap();
        let history = fit(&mut net, &train, &holdout, 1).unwrap();
        let best = history.iter().filter_map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        let prefixes: Vec<Array3<f32>> = holdout.iter().map(|s| net.prefix(&s.image).unwrap()).collect();
        let (loss, _) = evaluate(&net, &prefixes, &holdout);
        assert!((loss - best).abs() < 1e-9, "restored {loss} vs best {best}");
    }
}
