use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::train::EpochRecord;
use super::vgg::{le_f32, BackboneSource, Vgg16};
use super::ModelConfig;
use crate::class::{Class, CLASS_ORDER};
use crate::error::{Error, IoContext, Result};
use crate::ingest::PreparedImage;
use crate::provenance::Provenance;

pub const WEIGHTS_FILE: &str = "weights";
pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.json";
pub const CLASS_ORDER_FILE: &str = "class_order.json";

/// Contents of `config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleConfig {
    fold: usize,
    model: ModelConfig,
    backbone: BackboneSource,
    /// SHA-256 of the frozen backbone parameters.
    frozen_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

/// One fold's trained classifier.
///
/// On disk the `weights` file holds the fine-tuned tail, the head and the
/// batch-norm statistics; the frozen backbone is rebuilt from its recorded
/// source and checked against `frozen_digest`.
#[derive(Debug, Clone)]
pub struct TrainedModelBundle {
    pub network: Network,
    pub fold: usize,
    pub class_order: Vec<Class>,
    pub history: Vec<EpochRecord>,
    pub frozen_digest: String,
    pub provenance: Option<Provenance>,
}

impl TrainedModelBundle {
    pub fn new(network: Network, fold: usize, history: Vec<EpochRecord>) -> Self {
        TrainedModelBundle {
            frozen_digest: network.frozen_digest(),
            network,
            fold,
            class_order: CLASS_ORDER.to_vec(),
            history,
            provenance: None,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    /// Probability vector over [`TrainedModelBundle::class_order`].
    pub fn predict_frame(&self, image: &PreparedImage) -> Result<Vec<f64>> {
        self.network.predict(image)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let tensors = self.network.persisted_tensors();
        let bytes: Vec<Vec<u8>> = tensors
            .iter()
            .map(|(_, _, values)| values.iter().flat_map(|v| v.to_le_bytes()).collect())
            .collect();
        let views = tensors
            .iter()
            .zip(&bytes)
            .map(|((name, shape, _), data)| {
                TensorView::new(Dtype::F32, shape.clone(), data)
                    .map(|view| (name.clone(), view))
                    .map_err(|e| Error::Bundle(format!("{name}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = dir.join(WEIGHTS_FILE);
        safetensors::serialize_to_file(views, &None, &weights).map_err(|e| Error::Bundle(format!("{}: {e}", weights.display())))?;

        let config = BundleConfig {
            fold: self.fold,
            model: self.network.config().clone(),
            backbone: self.network.source().clone(),
            frozen_digest: self.frozen_digest.clone(),
            provenance: self.provenance.clone(),
        };
        write_json(&dir.join(CONFIG_FILE), &config)?;
        write_json(&dir.join(HISTORY_FILE), &self.history)?;
        write_json(&dir.join(CLASS_ORDER_FILE), &self.class_order)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: BundleConfig = read_json(&dir.join(CONFIG_FILE))?;
        let history: Vec<EpochRecord> = read_json(&dir.join(HISTORY_FILE))?;
        let class_order = Self::read_class_order(dir)?;
        if class_order.len() != config.model.num_classes {
            return Err(Error::Bundle(format!(
                "{}: {} classes in class_order but the model has {}",
                dir.display(),
                class_order.len(),
                config.model.num_classes
            )));
        }

        let backbone = Vgg16::load(&config.backbone)?;
        let mut network = Network::from_parts(config.model.clone(), backbone, config.backbone.clone())?;
        if network.frozen_digest() != config.frozen_digest {
            return Err(Error::Bundle(format!(
                "{}: rebuilt backbone does not match the recorded frozen digest",
                dir.display()
            )));
        }

        let path = dir.join(WEIGHTS_FILE);
        let bytes = fs::read(&path).at(&path)?;
        let tensors = SafeTensors::deserialize(&bytes).map_err(|e| Error::Bundle(format!("{}: {e}", path.display())))?;
        let expected: BTreeSet<String> = network.persisted_tensors().into_iter().map(|(n, _, _)| n).collect();
        let found: BTreeSet<String> = tensors.names().into_iter().cloned().collect();
        if expected != found {
            return Err(Error::Bundle(format!(
                "{}: tensor set mismatch (missing {:?}, unexpected {:?})",
                path.display(),
                expected.difference(&found).collect::<Vec<_>>(),
                found.difference(&expected).collect::<Vec<_>>()
            )));
        }
        for name in &expected {
            let view = tensors.tensor(name).map_err(|e| Error::Bundle(format!("{name}: {e}")))?;
            if view.dtype() != Dtype::F32 {
                return Err(Error::Bundle(format!("{name}: expected f32")));
            }
            network.set_tensor(name, &le_f32(view.data()))?;
        }

        Ok(TrainedModelBundle {
            network,
            fold: config.fold,
            class_order,
            history,
            frozen_digest: config.frozen_digest,
            provenance: config.provenance,
        })
    }

    /// Whether `dir` looks like a saved bundle (has a weights file and a config).
    pub fn is_bundle_dir(dir: &Path) -> bool {
        dir.join(WEIGHTS_FILE).is_file() && dir.join(CONFIG_FILE).is_file()
    }

    pub fn read_class_order(dir: &Path) -> Result<Vec<Class>> {
        read_json(&dir.join(CLASS_ORDER_FILE))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).at(path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    Ok(serde_json::from_str(&text)?)
}
