use std::path::PathBuf;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::head::{softmax, Head, HeadGrads};
use super::layers::{max_pool, max_pool_backward, ConvCache};
use super::vgg::{pools_after, BackboneSource, Vgg16, CONV_COUNT, FEATURE_CHANNELS, LAYER_NAMES};
use super::{ModelConfig, WEIGHTS_ENV};
use crate::error::{Error, Result};
use crate::ingest::PreparedImage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCensus {
    pub name: String,
    pub trainable: usize,
    pub non_trainable: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCensus {
    pub layers: Vec<LayerCensus>,
    pub trainable: usize,
    pub non_trainable: usize,
}

/// Backbone + head with the frozen/trainable split fixed by the config.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: ModelConfig,
    pub(crate) backbone: Vgg16,
    pub(crate) head: Head,
    source: BackboneSource,
}

enum StageCache {
    Conv(usize, ConvCache),
    Pool(Vec<u32>, (usize, usize, usize)),
}

/// Saved activations of the trainable backbone tail for one sample.
pub struct TailCache {
    stages: Vec<StageCache>,
    /// Height and width of the map entering global pooling.
    pooled_hw: (usize, usize),
}

/// Gradients for every trainable tensor, in [`Network::trainable_tensors_mut`] order.
pub struct Gradients {
    pub convs: Vec<(Array2<f32>, Array1<f32>)>,
    pub head: Option<HeadGrads>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for (w, b) in &self.convs {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        if let Some(h) = &self.head {
            out.push(h.dense1_w.as_slice().expect("standard layout"));
            out.push(h.dense1_b.as_slice().expect("standard layout"));
            out.push(h.bn_gamma.as_slice().expect("standard layout"));
            out.push(h.bn_beta.as_slice().expect("standard layout"));
            out.push(h.dense2_w.as_slice().expect("standard layout"));
            out.push(h.dense2_b.as_slice().expect("standard layout"));
        }
        out
    }
}

fn resolve_backbone(config: &ModelConfig) -> Result<(Vgg16, BackboneSource)> {
    let weights = match config.backbone.as_str() {
        "vgg16-random" => None,
        _ => config
            .backbone_weights
            .clone()
            .or_else(|| std::env::var_os(WEIGHTS_ENV).map(PathBuf::from)),
    };
    match weights {
        Some(path) => {
            let (net, sha256) = Vgg16::from_safetensors(&path)?;
            let source = BackboneSource::File {
                path: path.to_string_lossy().into_owned(),
                sha256,
            };
            Ok((net, source))
        }
        None => {
            if config.backbone == "vgg16-imagenet" {
                log::warn!("no pretrained VGG16 weights given; initializing backbone from seed {}", config.seed);
            }
            Ok((Vgg16::seeded(config.seed), BackboneSource::Seeded { seed: config.seed }))
        }
    }
}

/// Builds the classifier and reports its parameter census.
pub fn build_model(config: &ModelConfig) -> Result<(Network, ParameterCensus)> {
    config.validate()?;
    let (backbone, source) = resolve_backbone(config)?;
    let network = Network::from_parts(config.clone(), backbone, source)?;
    let census = network.census();
    Ok((network, census))
}

impl Network {
    /// Attaches a freshly initialized head (seeded from `config.seed`).
    pub fn from_parts(config: ModelConfig, backbone: Vgg16, source: BackboneSource) -> Result<Network> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6865_6164);
        let head = Head::new(
            FEATURE_CHANNELS,
            config.hidden_units,
            config.num_classes,
            config.dropout_rate as f32,
            &mut rng,
        );
        Ok(Network {
            config,
            backbone,
            head,
            source,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn source(&self) -> &BackboneSource {
        &self.source
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Head {
        &mut self.head
    }

    pub fn backbone(&self) -> &Vgg16 {
        &self.backbone
    }

    /// Index of the first fine-tuned backbone convolution.
    pub fn first_trainable_conv(&self) -> usize {
        CONV_COUNT - self.config.trainable_tail_layers
    }

    pub fn census(&self) -> ParameterCensus {
        let first = self.first_trainable_conv();
        let mut layers: Vec<LayerCensus> = self
            .backbone
            .convs
            .iter()
            .enumerate()
            .map(|(i, conv)| {
                let n = conv.parameter_count();
                LayerCensus {
                    name: LAYER_NAMES[i].to_string(),
                    trainable: if i >= first { n } else { 0 },
                    non_trainable: if i >= first { 0 } else { n },
                }
            })
            .collect();
        let h = &self.head;
        layers.push(LayerCensus {
            name: "dense".into(),
            trainable: h.dense1_w.len() + h.dense1_b.len(),
            non_trainable: 0,
        });
        layers.push(LayerCensus {
            name: "batch_normalization".into(),
            trainable: h.bn_gamma.len() + h.bn_beta.len(),
            non_trainable: h.frozen_count(),
        });
        layers.push(LayerCensus {
            name: "dense_output".into(),
            trainable: h.dense2_w.len() + h.dense2_b.len(),
            non_trainable: 0,
        });
        ParameterCensus {
            trainable: layers.iter().map(|l| l.trainable).sum(),
            non_trainable: layers.iter().map(|l| l.non_trainable).sum(),
            layers,
        }
    }

    /// SHA-256 of the frozen backbone convolutions.
    pub fn frozen_digest(&self) -> String {
        self.backbone.digest(0..self.first_trainable_conv())
    }

    /// SHA-256 over every persisted (trainable tail, head and batch-norm) tensor.
    pub fn trained_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, _, values) in self.persisted_tensors() {
            hasher.update(name.as_bytes());
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    fn check_input(&self, image: &PreparedImage) -> Result<()> {
        if image.side() != self.config.input_side as usize {
            return Err(Error::Validation(format!(
                "model expects {0}x{0} input, got {1}x{1}",
                self.config.input_side,
                image.side()
            )));
        }
        Ok(())
    }

    /// Activations entering the first trainable convolution.
    pub fn prefix(&self, image: &PreparedImage) -> Result<Array3<f32>> {
        self.check_input(image)?;
        let side = image.side();
        let x = Array3::from_shape_vec((3, side, side), image.data().to_vec()).expect("checked shape");
        Ok(self.backbone.forward_range(x, 0..self.first_trainable_conv()))
    }

    /// Globally pooled 512-length feature vector from prefix activations.
    pub fn pooled_features(&self, prefix: Array3<f32>) -> Array1<f32> {
        let x = self.backbone.forward_range(prefix, self.first_trainable_conv()..CONV_COUNT);
        global_average(&x)
    }

    /// Class probabilities for a batch of pooled features (inference mode).
    pub fn probabilities(&self, features: ArrayView2<f32>) -> Array2<f64> {
        softmax(self.head.logits(features).view())
    }

    /// Probability vector over the class order for one prepared image.
    pub fn predict(&self, image: &PreparedImage) -> Result<Vec<f64>> {
        let features = self.pooled_features(self.prefix(image)?);
        let batch = features.insert_axis(Axis(0));
        Ok(self.probabilities(batch.view()).row(0).to_vec())
    }

    pub(crate) fn tail_forward(&self, prefix: Array3<f32>) -> (Array1<f32>, TailCache) {
        let mut x = prefix;
        let mut stages = Vec::new();
        for i in self.first_trainable_conv()..CONV_COUNT {
            let (y, cache) = self.backbone.convs[i].forward_cached(x.view());
            stages.push(StageCache::Conv(i, cache));
            x = y;
            if pools_after(i) {
                let dim = x.dim();
                let (y, argmax) = max_pool(x.view());
                stages.push(StageCache::Pool(argmax, dim));
                x = y;
            }
        }
        let pooled_hw = (x.dim().1, x.dim().2);
        (global_average(&x), TailCache { stages, pooled_hw })
    }

    pub(crate) fn zero_gradients(&self) -> Gradients {
        Gradients {
            convs: (self.first_trainable_conv()..CONV_COUNT)
                .map(|i| {
                    let c = &self.backbone.convs[i];
                    (Array2::zeros(c.weight.dim()), Array1::zeros(c.bias.dim()))
                })
                .collect(),
            head: None,
        }
    }

    /// Backpropagates a pooled-feature gradient through the trainable tail.
    pub(crate) fn tail_backward(&self, cache: &TailCache, grad_features: ndarray::ArrayView1<f32>, grads: &mut Gradients) {
        let first = self.first_trainable_conv();
        if cache.stages.is_empty() {
            return;
        }
        let (h, w) = cache.pooled_hw;
        let scale = 1.0 / (h * w) as f32;
        let mut grad = Array3::from_shape_fn((FEATURE_CHANNELS, h, w), |(c, _, _)| grad_features[c] * scale);
        for stage in cache.stages.iter().rev() {
            match stage {
                StageCache::Pool(argmax, dim) => grad = max_pool_backward(&grad, argmax, *dim),
                StageCache::Conv(i, conv_cache) => {
                    let (gw, gb) = &mut grads.convs[i - first];
                    match self.backbone.convs[*i].backward(conv_cache, &grad, gw, gb, *i > first) {
                        Some(g) => grad = g,
                        None => break,
                    }
                }
            }
        }
    }

    /// Trainable tensors in a stable order: tail convolutions (weight, bias),
    /// then the head.
    pub(crate) fn trainable_tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let first = self.first_trainable_conv();
        let mut out: Vec<&mut [f32]> = Vec::new();
        for conv in &mut self.backbone.convs[first..] {
            out.push(conv.weight.as_slice_mut().expect("standard layout"));
            out.push(conv.bias.as_slice_mut().expect("standard layout"));
        }
        let h = &mut self.head;
        out.push(h.dense1_w.as_slice_mut().expect("standard layout"));
        out.push(h.dense1_b.as_slice_mut().expect("standard layout"));
        out.push(h.bn_gamma.as_slice_mut().expect("standard layout"));
        out.push(h.bn_beta.as_slice_mut().expect("standard layout"));
        out.push(h.dense2_w.as_slice_mut().expect("standard layout"));
        out.push(h.dense2_b.as_slice_mut().expect("standard layout"));
        out
    }

    /// Named tensors persisted in a bundle: the trainable tail, the head and the
    /// batch-norm running statistics, as `(name, shape, values)`.
    pub(crate) fn persisted_tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let first = self.first_trainable_conv();
        let mut out = Vec::new();
        for i in first..CONV_COUNT {
            let conv = &self.backbone.convs[i];
            let (cout, k) = conv.weight.dim();
            out.push((format!("{}.weight", LAYER_NAMES[i]), vec![cout, k / 9, 3, 3], conv.weight.as_slice().expect("standard layout")));
            out.push((format!("{}.bias", LAYER_NAMES[i]), vec![cout], conv.bias.as_slice().expect("standard layout")));
        }
        let h = &self.head;
        let two = |a: &Array2<f32>| vec![a.nrows(), a.ncols()];
        out.push(("dense.weight".into(), two(&h.dense1_w), h.dense1_w.as_slice().expect("standard layout")));
        out.push(("dense.bias".into(), vec![h.dense1_b.len()], h.dense1_b.as_slice().expect("standard layout")));
        out.push(("bn.gamma".into(), vec![h.bn_gamma.len()], h.bn_gamma.as_slice().expect("standard layout")));
        out.push(("bn.beta".into(), vec![h.bn_beta.len()], h.bn_beta.as_slice().expect("standard layout")));
        out.push(("bn.moving_mean".into(), vec![h.bn_mean.len()], h.bn_mean.as_slice().expect("standard layout")));
        out.push(("bn.moving_variance".into(), vec![h.bn_var.len()], h.bn_var.as_slice().expect("standard layout")));
        out.push(("dense_output.weight".into(), two(&h.dense2_w), h.dense2_w.as_slice().expect("standard layout")));
        out.push(("dense_output.bias".into(), vec![h.dense2_b.len()], h.dense2_b.as_slice().expect("standard layout")));
        out
    }

    /// Overwrites the tensor called `name` (see [`Network::persisted_tensors`]).
    pub(crate) fn set_tensor(&mut self, name: &str, values: &[f32]) -> Result<()> {
        let first = self.first_trainable_conv();
        let target: &mut [f32] = match name {
            "dense.weight" => self.head.dense1_w.as_slice_mut().expect("standard layout"),
            "dense.bias" => self.head.dense1_b.as_slice_mut().expect("standard layout"),
            "bn.gamma" => self.head.bn_gamma.as_slice_mut().expect("standard layout"),
            "bn.beta" => self.head.bn_beta.as_slice_mut().expect("standard layout"),
            "bn.moving_mean" => self.head.bn_mean.as_slice_mut().expect("standard layout"),
            "bn.moving_variance" => self.head.bn_var.as_slice_mut().expect("standard layout"),
            "dense_output.weight" => self.head.dense2_w.as_slice_mut().expect("standard layout"),
            "dense_output.bias" => self.head.dense2_b.as_slice_mut().expect("standard layout"),
            other => {
                let (layer, kind) = other
                    .rsplit_once('.')
                    .ok_or_else(|| Error::Bundle(format!("unexpected tensor {other}")))?;
                let i = LAYER_NAMES
                    .iter()
                    .position(|n| *n == layer)
                    .filter(|&i| i >= first)
                    .ok_or_else(|| Error::Bundle(format!("tensor {other} is not part of the trainable tail")))?;
                let conv = &mut self.backbone.convs[i];
                match kind {
                    "weight" => conv.weight.as_slice_mut().expect("standard layout"),
                    "bias" => conv.bias.as_slice_mut().expect("standard layout"),
                    _ => return Err(Error::Bundle(format!("unexpected tensor {other}"))),
                }
            }
        };
        if target.len() != values.len() {
            return Err(Error::Bundle(format!(
                "tensor {name}: expected {} values, found {}",
                target.len(),
                values.len()
            )));
        }
        target.copy_from_slice(values);
        Ok(())
    }
}

fn global_average(x: &Array3<f32>) -> Array1<f32> {
    let (c, h, w) = x.dim();
    x.view()
        .into_shape_with_order((c, h * w))
        .expect("contiguous")
        .mean_axis(Axis(1))
        .expect("non-empty plane")
}
