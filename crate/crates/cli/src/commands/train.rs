use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Parser;
use serde::Serialize;

use mwae_core::data::{augment, split, Dataset, SplitMode, SplitSpec};
use mwae_core::nn::save_checkpoint;
use mwae_core::train::{train, TrainConfig, TrainItem};
use mwae_core::{AnoVariant, Error, ModelSpec, ModelState, Result, Rng};

use crate::config::{archive_config, field, read_config_file};
use crate::io::load_dataset;

#[derive(Parser)]
pub struct Args {
    /// Architecture: clu, s3, s5, m3, m5, or b3.
    #[arg(long)]
    pub model: String,
    /// Dataset bundle file or raw sample directory.
    #[arg(long)]
    pub data: PathBuf,
    /// clustering (mixed labels, 5% test / 5% val, adds the NIR/R
    /// channel) or anomaly (healthy-only training, 20% test / 10% val).
    #[arg(long)]
    pub mode: Mode,
    /// Output directory for checkpoint, logs, and archives.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with training keys; command-line flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Defaults to 8 in clustering mode and 4 in anomaly mode.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Multiply every filter count (CPU-budget knob; 1.0 = paper widths).
    #[arg(long)]
    pub width_scale: Option<f64>,
    /// Enlarge the training split to this multiple by augmentation.
    #[arg(long, default_value_t = 1)]
    pub augment: usize,
    /// Restrict the reconstruction loss to leaf-mask pixels.
    #[arg(long, default_value_t = false)]
    pub masked: bool,
    /// Record real epoch wall time in train_log.csv (off keeps logs
    /// byte-identical across reruns).
    #[arg(long, default_value_t = false)]
    pub timing: bool,
    /// Square size when ingesting a raw directory.
    #[arg(long, default_value_t = 512)]
    pub ingest_size: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Clustering,
    Anomaly,
}

/// Resolved settings, archived beside the outputs.
#[derive(Serialize)]
struct ResolvedConfig {
    model: String,
    mode: Mode,
    data: String,
    seed: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps_adam: f64,
    max_epochs: usize,
    patience: usize,
    batch_size: usize,
    width_scale: f64,
    augment: usize,
    masked: bool,
    timing: bool,
}

fn build_model(name: &str, channels: usize, size: (usize, usize), width_scale: f64) -> Result<ModelSpec> {
    let spec = if name.eq_ignore_ascii_case("clu") {
        ModelSpec::clu_ae(channels, size)?
    } else {
        ModelSpec::ano_ae(name.parse::<AnoVariant>()?, channels, size)?
    };
    if (width_scale - 1.0).abs() > f64::EPSILON {
        spec.scale_width(width_scale)
    } else {
        Ok(spec)
    }
}

fn items_for(dataset: &Dataset, indices: &[usize]) -> Vec<TrainItem> {
    indices
        .iter()
        .map(|&i| dataset.samples[i].to_train_item())
        .collect()
}

pub fn run(args: Args) -> Result<()> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => toml::Table::new(),
    };
    let default_batch = match args.mode {
        Mode::Clustering => 8,
        Mode::Anomaly => 4,
    };
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: args
            .learning_rate
            .or(field(&file, "learning_rate")?)
            .unwrap_or(defaults.learning_rate),
        beta1: field(&file, "beta1")?.unwrap_or(defaults.beta1),
        beta2: field(&file, "beta2")?.unwrap_or(defaults.beta2),
        eps_adam: field(&file, "eps_adam")?.unwrap_or(defaults.eps_adam),
        max_epochs: args
            .max_epochs
            .or(field(&file, "max_epochs")?)
            .unwrap_or(defaults.max_epochs),
        patience: args
            .patience
            .or(field(&file, "patience")?)
            .unwrap_or(defaults.patience),
        batch_size: args
            .batch_size
            .or(field(&file, "batch_size")?)
            .unwrap_or(default_batch),
        seed: args.seed.or(field(&file, "seed")?).unwrap_or(0),
        masked_loss: args.masked || field(&file, "masked")?.unwrap_or(false),
    };
    let width_scale = args
        .width_scale
        .or(field(&file, "width_scale")?)
        .unwrap_or(1.0);

    let is_clu = args.model.eq_ignore_ascii_case("clu");
    match (is_clu, args.mode) {
        (true, Mode::Anomaly) => {
            eprintln!("warning: the clu architecture with anomaly mode is unusual (proceeding)")
        }
        (false, Mode::Clustering) => eprintln!(
            "warning: residual anomaly architectures with clustering mode are unusual (proceeding)"
        ),
        _ => {}
    }

    let dataset = load_dataset(&args.data, args.ingest_size)?;
    let dataset = match args.mode {
        Mode::Clustering => dataset.with_vi_channel()?,
        Mode::Anomaly => dataset,
    };
    let first = dataset
        .samples
        .first()
        .ok_or_else(|| Error::data("dataset is empty"))?;
    let (channels, size) = (first.channels(), first.size());

    let split_mode = match args.mode {
        Mode::Clustering => SplitMode::Clustering,
        Mode::Anomaly => SplitMode::Anomaly,
    };
    let parts = split(&dataset, &SplitSpec { mode: split_mode, seed: cfg.seed })?;

    std::fs::create_dir_all(&args.out)?;
    let mut split_csv = BufWriter::new(File::create(args.out.join("split.csv"))?);
    writeln!(split_csv, "sample_id,subset")?;
    for (i, s) in dataset.samples.iter().enumerate() {
        writeln!(split_csv, "{},{}", s.provenance, parts.subset_of(i))?;
    }
    split_csv.flush()?;

    // training items, optionally augmented; validation stays natural
    let train_items = if args.augment > 1 {
        let sub = Dataset {
            samples: parts.train.iter().map(|&i| dataset.samples[i].clone()).collect(),
            band_names: dataset.band_names.clone(),
            seed: dataset.seed,
        };
        let mut aug_rng = Rng::seed_from(cfg.seed ^ 0xA06);
        let enlarged = augment(&sub, &mut aug_rng, sub.len() * args.augment)?;
        enlarged.samples.iter().map(|s| s.to_train_item()).collect()
    } else {
        items_for(&dataset, &parts.train)
    };
    let val_items = items_for(&dataset, &parts.val);

    let spec = build_model(&args.model, channels, size, width_scale)?;
    let mut model = ModelState::new(spec)?;
    model.he_init(&mut Rng::seed_from(cfg.seed));

    println!(
        "training {} ({} parameters) on {} samples ({} validation), batch {}",
        args.model,
        model.param_count(),
        train_items.len(),
        val_items.len(),
        cfg.batch_size
    );
    let (best, report) = train(model, &train_items, &val_items, &cfg)?;

    save_checkpoint(&best, &args.out.join("checkpoint.mwck"))?;
    let mut log = BufWriter::new(File::create(args.out.join("train_log.csv"))?);
    report.write_csv(&mut log, args.timing)?;
    log.flush()?;
    archive_config(
        &ResolvedConfig {
            model: args.model.clone(),
            mode: args.mode,
            data: args.data.display().to_string(),
            seed: cfg.seed,
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps_adam: cfg.eps_adam,
            max_epochs: cfg.max_epochs,
            patience: cfg.patience,
            batch_size: cfg.batch_size,
            width_scale,
            augment: args.augment,
            masked: cfg.masked_loss,
            timing: args.timing,
        },
        &args.out.join("config.toml"),
    )?;

    println!(
        "stopped after epoch {} (best epoch {}, val loss {:.6}) in {:.1}s",
        report.stopped_epoch,
        report.best_epoch,
        report.val_loss[report.best_epoch - 1],
        report.wall_seconds
    );
    Ok(())
}
