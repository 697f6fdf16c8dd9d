use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lusnet_core::ingest::ExtractionParams;
use lusnet_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Md,
}

/// Settings shared by every subcommand. Loaded from `--config` (TOML);
/// command-line flags take precedence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root holding `data/<class>/`; defaults to `<out>/dataset`.
    pub data: Option<PathBuf>,
    /// Every artifact is written below this directory.
    pub out: PathBuf,
    pub k: usize,
    /// Seeds synthesis, fold assignment and training.
    pub seed: u64,
    pub extraction: ExtractionParams,
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub report_formats: Vec<ReportFormat>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: PathBuf::from("lusnet-out"),
            k: 5,
            seed: 0,
            extraction: ExtractionParams::default(),
            model: ModelConfig::default(),
            synth: SynthConfig::default(),
            report_formats: vec![ReportFormat::Md, ReportFormat::Json],
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub data: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, flags: &Overrides) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(out) = &flags.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = flags.seed {
            cfg.seed = seed;
        }
        if let Some(k) = flags.k {
            cfg.k = k;
        }
        if let Some(data) = &flags.data {
            cfg.data = Some(data.clone());
        }
        cfg.model.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn data_root(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join("dataset"))
    }
}

/// Fixed artifact locations below the output root.
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: &Path) -> Self {
        Paths { root: root.to_path_buf() }
    }

    pub fn frames(&self) -> PathBuf {
        self.root.join("frames")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn folds(&self) -> PathBuf {
        self.root.join("folds.json")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn model(&self, fold: usize) -> PathBuf {
        self.models().join(format!("fold{fold}"))
    }

    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluation")
    }

    pub fn predictions(&self) -> PathBuf {
        self.evaluation().join("predictions.json")
    }

    pub fn report_json(&self) -> PathBuf {
        self.evaluation().join("report.json")
    }

    pub fn roc(&self) -> PathBuf {
        self.evaluation().join("roc")
    }

    pub fn contributions(&self) -> PathBuf {
        self.root.join("contributions")
    }
}
