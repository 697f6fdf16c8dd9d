//! VGG16 convolutional backbone (13 convolutions, 5 max pools).

use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{max_pool, Conv2d};
use crate::error::{Error, IoContext, Result};

pub const CONV_COUNT: usize = 13;

/// `(in, out)` channels of each convolution.
pub const CHANNELS: [(usize, usize); CONV_COUNT] = [
    (3, 64),
    (64, 64),
    (64, 128),
    (128, 128),
    (128, 256),
    (256, 256),
    (256, 256),
    (256, 512),
    (512, 512),
    (512, 512),
    (512, 512),
    (512, 512),
    (512, 512),
];

pub const LAYER_NAMES: [&str; CONV_COUNT] = [
    "block1_conv1",
    "block1_conv2",
    "block2_conv1",
    "block2_conv2",
    "block3_conv1",
    "block3_conv2",
    "block3_conv3",
    "block4_conv1",
    "block4_conv2",
    "block4_conv3",
    "block5_conv1",
    "block5_conv2",
    "block5_conv3",
];

/// Position of each convolution in torchvision's `vgg16().features`.
const TORCHVISION_INDEX: [usize; CONV_COUNT] = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28];

/// Each block ends with a 2×2 max pool after these convolutions.
pub fn pools_after(conv: usize) -> bool {
    matches!(conv, 1 | 3 | 6 | 9 | 12)
}

pub const FEATURE_CHANNELS: usize = 512;

/// Where the backbone weights came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackboneSource {
    /// He-normal initialization from a seed; used when no pretrained file is given.
    Seeded { seed: u64 },
    /// Pretrained weights in safetensors format.
    File { path: String, sha256: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vgg16 {
    pub convs: Vec<Conv2d>,
}

impl Vgg16 {
    pub fn seeded(seed: u64) -> Vgg16 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = CHANNELS
            .iter()
            .map(|&(cin, cout)| {
                let normal = Normal::new(0.0f32, (2.0 / (cin * 9) as f32).sqrt()).expect("positive std");
                Conv2d {
                    weight: Array2::from_shape_simple_fn((cout, cin * 9), || normal.sample(&mut rng)),
                    bias: Array1::zeros(cout),
                }
            })
            .collect();
        Vgg16 { convs }
    }

    /// Loads `features.{i}.weight|bias` (torchvision) or `block{b}_conv{n}.weight|bias`
    /// tensors, `[out, in, 3, 3]` f32. Returns the file's SHA-256 alongside.
    pub fn from_safetensors(path: &Path) -> Result<(Vgg16, String)> {
        let bytes = std::fs::read(path).at(path)?;
        let sha = hex::encode(Sha256::digest(&bytes));
        let tensors = SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let fetch = |names: [String; 2], shape: &[usize]| -> Result<Vec<f32>> {
            for name in &names {
                if let Ok(view) = tensors.tensor(name) {
                    if view.dtype() != Dtype::F32 || view.shape() != shape {
                        return Err(Error::Config(format!(
                            "{name}: expected f32 {shape:?}, found {:?} {:?}",
                            view.dtype(),
                            view.shape()
                        )));
                    }
                    return Ok(le_f32(view.data()));
                }
            }
            Err(Error::Config(format!("{}: missing tensor {}", path.display(), names[0])))
        };
        let mut convs = Vec::with_capacity(CONV_COUNT);
        for (i, &(cin, cout)) in CHANNELS.iter().enumerate() {
            let ti = TORCHVISION_INDEX[i];
            let name = LAYER_NAMES[i];
            let w = fetch([format!("features.{ti}.weight"), format!("{name}.weight")], &[cout, cin, 3, 3])?;
            let b = fetch([format!("features.{ti}.bias"), format!("{name}.bias")], &[cout])?;
            convs.push(Conv2d {
                weight: Array2::from_shape_vec((cout, cin * 9), w).expect("checked shape"),
                bias: Array1::from_vec(b),
            });
        }
        Ok((Vgg16 { convs }, sha))
    }

    pub fn load(source: &BackboneSource) -> Result<Vgg16> {
        match source {
            BackboneSource::Seeded { seed } => Ok(Vgg16::seeded(*seed)),
            BackboneSource::File { path, sha256 } => {
                let (net, actual) = Vgg16::from_safetensors(Path::new(path))?;
                if &actual != sha256 {
                    return Err(Error::Bundle(format!(
                        "backbone file {path} changed: sha256 {actual}, expected {sha256}"
                    )));
                }
                Ok(net)
            }
        }
    }

    /// Runs convolutions `range` (with their trailing pools) on `x`.
    pub fn forward_range(&self, mut x: Array3<f32>, range: Range<usize>) -> Array3<f32> {
        for i in range {
            x = self.convs[i].forward(x.view());
            if pools_after(i) {
                x = max_pool(x.view()).0;
            }
        }
        x
    }

    pub fn parameter_count(&self) -> usize {
        self.convs.iter().map(Conv2d::parameter_count).sum()
    }

    /// SHA-256 over the raw parameters of convolutions `range`.
    pub fn digest(&self, range: Range<usize>) -> String {
        let mut hasher = Sha256::new();
        for conv in &self.convs[range] {
            for v in conv.weight.iter().chain(conv.bias.iter()) {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

pub(crate) fn le_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}
