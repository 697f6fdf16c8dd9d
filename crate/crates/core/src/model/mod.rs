//! Transfer-learning classifier: VGG16 convolutional backbone with a frozen
//! prefix, global average pooling and a small dense head.

mod adam;
mod augment;
mod bundle;
mod head;
mod layers;
mod network;
mod train;
pub mod vgg;

pub use adam::Adam;
pub use augment::{augment, AugmentDraw};
pub use bundle::{TrainedModelBundle, CLASS_ORDER_FILE, CONFIG_FILE, HISTORY_FILE, WEIGHTS_FILE};
pub use head::{softmax, softmax_cross_entropy, Head, BN_EPSILON, BN_MOMENTUM};
pub use layers::{col2im, im2col, max_pool, Conv2d};
pub use network::{build_model, LayerCensus, Network, ParameterCensus};
pub use train::{
    fit, train_fold, DiskFrames, EpochRecord, FrameProvider, Sample, StepStats, Trainer,
};
pub use vgg::{BackboneSource, Vgg16};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming a VGG16 safetensors file, consulted when the
/// configuration does not give one.
pub const WEIGHTS_ENV: &str = "LUSNET_VGG16_WEIGHTS";

pub const KNOWN_BACKBONES: &[&str] = &["vgg16-imagenet", "vgg16-random"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    pub max_rotation_deg: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    /// Fraction of the side, drawn independently per axis.
    pub max_shift_frac: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            max_rotation_deg: 10.0,
            horizontal_flip: true,
            vertical_flip: true,
            max_shift_frac: 0.10,
        }
    }
}

impl AugmentationSpec {
    pub fn disabled() -> Self {
        AugmentationSpec {
            max_rotation_deg: 0.0,
            horizontal_flip: false,
            vertical_flip: false,
            max_shift_frac: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.max_rotation_deg == 0.0 && !self.horizontal_flip && !self.vertical_flip && self.max_shift_frac == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite()) {
            return Err(Error::Config(format!("max_rotation_deg must be >= 0, got {}", self.max_rotation_deg)));
        }
        if !(0.0..1.0).contains(&self.max_shift_frac) {
            return Err(Error::Config(format!("max_shift_frac must be in [0, 1), got {}", self.max_shift_frac)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: String,
    /// Pretrained VGG16 weights (safetensors). Without one the backbone is
    /// initialized from `seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backbone_weights: Option<PathBuf>,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub input_side: u32,
    pub learning_rate: f64,
    /// Number of final backbone convolutions that are fine-tuned.
    pub trainable_tail_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Share of the training split held out to select the best epoch.
    pub validation_fraction: f64,
    pub augmentation: AugmentationSpec,
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: "vgg16-imagenet".into(),
            backbone_weights: None,
            hidden_units: 64,
            dropout_rate: 0.5,
            num_classes: 3,
            input_side: crate::ingest::INPUT_SIDE,
            learning_rate: 1e-4,
            trainable_tail_layers: 1,
            epochs: 30,
            batch_size: 16,
            validation_fraction: 0.1,
            augmentation: AugmentationSpec::default(),
            class_weighting: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !KNOWN_BACKBONES.contains(&self.backbone.as_str()) {
            return Err(Error::Config(format!(
                "unknown backbone {:?} (known: {})",
                self.backbone,
                KNOWN_BACKBONES.join(", ")
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.hidden_units == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden_units and batch_size must be >= 1".into()));
        }
        if self.input_side < 32 {
            return Err(Error::Config(format!("input_side must be >= 32, got {}", self.input_side)));
        }
        if self.trainable_tail_layers > vgg::CONV_COUNT {
            return Err(Error::Config(format!(
                "trainable_tail_layers must be <= {}, got {}",
                vgg::CONV_COUNT,
                self.trainable_tail_layers
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        self.augmentation.validate()
    }
}
