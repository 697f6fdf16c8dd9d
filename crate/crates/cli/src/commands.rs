use std::path::Path;

use anyhow::{bail, Context, Result};
use lusnet_core::evaluation::{evaluate, EvaluationReport, FoldPredictions, FramePrediction};
use lusnet_core::ingest::{ingest, DatasetLayout, DatasetManifest, ExtractionParams};
use lusnet_core::model::{train_fold, DiskFrames, FrameProvider, ModelConfig, TrainedModelBundle, WEIGHTS_FILE};
use lusnet_core::splits::{assign_folds, fold_views, FoldPlan};
use lusnet_core::Provenance;
use serde::Serialize;

use crate::config::{Paths, ReportFormat, RunConfig};
use crate::synth;

/// Fails with a message naming the missing artifact and the command producing it.
fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!(
            "missing prerequisite {}: run `lusnet {producer}` first",
            path.display()
        );
    }
    Ok(())
}

fn load_manifest(paths: &Paths) -> Result<DatasetManifest> {
    require(&paths.manifest(), "ingest")?;
    DatasetManifest::load(&paths.manifest()).with_context(|| format!("loading {}", paths.manifest().display()))
}

fn load_plan(paths: &Paths) -> Result<FoldPlan> {
    require(&paths.folds(), "split")?;
    FoldPlan::load(&paths.folds()).with_context(|| format!("loading {}", paths.folds().display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn synth_data(cfg: &RunConfig) -> Result<()> {
    let root = cfg.out.join("dataset");
    let n = synth::generate(&root, &cfg.synth, cfg.seed)?;
    #[derive(Serialize)]
    struct Settings<'a> {
        synth: &'a synth::SynthConfig,
        seed: u64,
    }
    let provenance = Provenance::new(
        "synth-data",
        &Settings {
            synth: &cfg.synth,
            seed: cfg.seed,
        },
    );
    write_text(&root.join("provenance.json"), &(serde_json::to_string_pretty(&provenance)? + "\n"))?;
    println!("wrote {n} synthetic recordings under {}", root.display());
    Ok(())
}

pub fn ingest_cmd(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(&cfg.out);
    let data_root = cfg.data_root();
    let layout = DatasetLayout {
        data_dir: data_root.join("data"),
        frames_dir: paths.frames(),
    };
    require(&layout.data_dir, "synth-data")?;
    let mut manifest = ingest(&layout, &cfg.extraction)?;
    #[derive(Serialize)]
    struct Settings<'a> {
        extraction: &'a ExtractionParams,
    }
    manifest.provenance = Some(Provenance::new("ingest", &Settings { extraction: &cfg.extraction }));
    manifest.save(&paths.manifest())?;
    println!(
        "{} recordings, {} frames -> {}",
        manifest.videos.len(),
        manifest.total_frames(),
        paths.manifest().display()
    );
    for (class, counts) in &manifest.counts {
        println!("  {class}: {} videos, {} frames", counts.videos, counts.frames);
    }
    Ok(())
}

pub fn split(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(&cfg.out);
    let manifest = load_manifest(&paths)?;
    let mut plan = assign_folds(&manifest, cfg.k, cfg.seed)?;
    #[derive(Serialize)]
    struct Settings {
        k: usize,
        seed: u64,
    }
    plan.provenance = Some(Provenance::new("split", &Settings { k: cfg.k, seed: cfg.seed }));
    for w in &plan.warnings {
        log::warn!("{w}");
    }
    plan.save(&paths.folds())?;
    println!("{}-fold plan -> {}", plan.k, paths.folds().display());
    for (fold, stats) in plan.stats.iter().enumerate() {
        let cells: Vec<String> = stats.iter().map(|(c, n)| format!("{c} {}/{}", n.videos, n.frames)).collect();
        println!("  fold {fold}: {}", cells.join(", "));
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSettings<'a> {
    model: &'a ModelConfig,
    fold: usize,
}

pub fn train(cfg: &RunConfig, fold: Option<usize>) -> Result<()> {
    let paths = Paths::new(&cfg.out);
    let manifest = load_manifest(&paths)?;
    let plan = load_plan(&paths)?;
    require(&paths.frames(), "ingest")?;
    let folds: Vec<usize> = match fold {
        Some(f) if f >= plan.k => bail!("fold {f} out of range for a {}-fold plan", plan.k),
        Some(f) => vec![f],
        None => (0..plan.k).collect(),
    };
    let frames = DiskFrames::new(paths.frames());
    for fold in folds {
        log::info!("training fold {fold}");
        let mut bundle = train_fold(&manifest, &plan, fold, &cfg.model, &frames)
            .with_context(|| format!("training fold {fold}"))?;
        bundle.provenance = Some(Provenance::new(
            "train",
            &TrainSettings {
                model: &cfg.model,
                fold,
            },
        ));
        let dir = paths.model(fold);
        bundle.save(&dir)?;
        let first = bundle.history.first().map(|e| e.train_loss).unwrap_or(f64::NAN);
        let last = bundle.history.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
        println!(
            "fold {fold}: {} epochs, train loss {first:.4} -> {last:.4} -> {}",
            bundle.history.len(),
            dir.display()
        );
    }
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let paths = Paths::new(&cfg.out);
    let manifest = load_manifest(&paths)?;
    let plan = load_plan(&paths)?;
    for fold in 0..plan.k {
        require(&paths.model(fold).join(WEIGHTS_FILE), &format!("train --fold {fold}"))?;
    }
    let frames = DiskFrames::new(paths.frames());
    let mut predictions = Vec::new();
    for fold in 0..plan.k {
        let bundle = TrainedModelBundle::load(&paths.model(fold))
            .with_context(|| format!("loading {}", paths.model(fold).display()))?;
        let view = fold_views(&plan, &manifest, fold)?;
        let side = bundle.config().input_side;
        let mut out = Vec::with_capacity(view.test.len());
        for frame in &view.test {
            let image = frames.load(frame, side)?;
            out.push(FramePrediction {
                video_id: frame.video_id.clone(),
                frame_index: frame.frame_index,
                truth: frame.label,
                probabilities: bundle.predict_frame(&image)?,
            });
        }
        log::info!("fold {fold}: {} test frames classified", out.len());
        predictions.push(FoldPredictions { fold, frames: out });
    }
    let mut report = evaluate(&predictions)?;
    #[derive(Serialize)]
    struct Settings<'a> {
        k: usize,
        seed: u64,
        model: &'a ModelConfig,
    }
    let provenance = Provenance::new(
        "evaluate",
        &Settings {
            k: plan.k,
            seed: plan.seed,
            model: &cfg.model,
        },
    );
    report.provenance = Some(provenance.clone());

    #[derive(Serialize)]
    struct PredictionsFile<'a> {
        provenance: &'a Provenance,
        folds: &'a [FoldPredictions],
    }
    let predictions_json = serde_json::to_string_pretty(&PredictionsFile {
        provenance: &provenance,
        folds: &predictions,
    })?;
    write_text(&paths.predictions(), &(predictions_json + "\n"))?;
    write_text(&paths.report_json(), &report.to_json()?)?;
    let written = report.write_roc_csvs(&paths.roc())?;
    write_text(
        &paths.roc().join("provenance.json"),
        &(serde_json::to_string_pretty(&provenance)? + "\n"),
    )?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let m = &report.pooled.metrics;
    println!(
        "pooled accuracy {:.3}, balanced accuracy {:.3}; report -> {} ({} ROC files)",
        m.accuracy,
        m.balanced_accuracy,
        paths.report_json().display(),
        written.len()
    );
    Ok(())
}

pub fn report(cfg: &RunConfig, format: Option<ReportFormat>) -> Result<()> {
    let paths = Paths::new(&cfg.out);
    require(&paths.report_json(), "evaluate")?;
    let text = std::fs::read_to_string(paths.report_json())?;
    let report = EvaluationReport::from_json(&text).with_context(|| format!("parsing {}", paths.report_json().display()))?;
    let format_flag = format.is_some();
    let formats = match format {
        Some(f) => vec![f],
        None => cfg.report_formats.clone(),
    };
    for format in formats {
        let (path, body) = match format {
            ReportFormat::Md => (cfg.out.join("report.md"), report.to_markdown()),
            ReportFormat::Json => (cfg.out.join("report.json"), report.to_json()?),
        };
        write_text(&path, &body)?;
        if format_flag {
            print!("{body}");
        } else {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
