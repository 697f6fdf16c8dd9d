mod commands;
mod config;
mod synth;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lusnet_service::ServiceConfig;

use crate::config::{Overrides, Paths, ReportFormat, RunConfig};

/// Lung-ultrasound COVID-19 screening pipeline.
#[derive(Parser)]
#[command(name = "lusnet", version, about)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; every artifact is written below it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of cross-validation folds.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the separable synthetic 3-class dataset under <out>/dataset.
    SynthData {
        #[arg(long)]
        videos_per_class: Option<usize>,
    },
    /// Extract and crop frames, then write the dataset manifest.
    Ingest {
        /// Dataset root containing data/<class>/ (default: <out>/dataset).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Assign recordings to video-disjoint, class-balanced folds.
    Split,
    /// Train fold models.
    Train(TrainArgs),
    /// Classify every fold's test frames and compute the evaluation report.
    Evaluate,
    /// Render the evaluation report.
    Report {
        #[arg(long, value_enum)]
        format: Option<ReportFormat>,
    },
    /// Serve the ensemble over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TrainArgs {
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    all_folds: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Directory of fold bundles (default: LUS_MODEL_DIR or <out>/models).
    #[arg(long)]
    models: Option<PathBuf>,
    /// Contribution storage (default: LUS_STORAGE_ROOT or <out>/contributions).
    #[arg(long)]
    storage: Option<PathBuf>,
    #[arg(long)]
    bind: Option<std::net::SocketAddr>,
}

fn serve_config(cfg: &RunConfig, args: &ServeArgs) -> Result<ServiceConfig> {
    let paths = Paths::new(&cfg.out);
    let env = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
    let model_dir = args
        .models
        .clone()
        .or_else(|| env("LUS_MODEL_DIR").map(PathBuf::from))
        .unwrap_or_else(|| paths.models());
    let storage = args
        .storage
        .clone()
        .or_else(|| env("LUS_STORAGE_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| paths.contributions());
    let mut service = ServiceConfig::from_lookup(|k| match k {
        "LUS_MODEL_DIR" => Some(model_dir.display().to_string()),
        "LUS_STORAGE_ROOT" => Some(storage.display().to_string()),
        other => env(other),
    })?;
    if service.manifest.is_none() && paths.manifest().is_file() {
        service.manifest = Some(paths.manifest());
    }
    if let Some(bind) = args.bind {
        service.bind = bind;
    }
    Ok(service)
}

fn run(cli: Cli) -> Result<()> {
    let data = match &cli.command {
        Command::Ingest { data } => data.clone(),
        _ => None,
    };
    let flags = Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        k: cli.k,
        data,
    };
    let mut cfg = RunConfig::load(cli.config.as_deref(), &flags)?;
    match cli.command {
        Command::SynthData { videos_per_class } => {
            if let Some(n) = videos_per_class {
                cfg.synth.videos_per_class = n;
            }
            commands::synth_data(&cfg)
        }
        Command::Ingest { .. } => commands::ingest_cmd(&cfg),
        Command::Split => commands::split(&cfg),
        Command::Train(args) => commands::train(&cfg, if args.all_folds { None } else { args.fold }),
        Command::Evaluate => commands::evaluate_cmd(&cfg),
        Command::Report { format } => commands::report(&cfg, format),
        Command::Serve(args) => {
            let service = serve_config(&cfg, &args)?;
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .context("starting async runtime")?
                .block_on(lusnet_service::serve(service))?;
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
