use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::Parser;
use serde::Serialize;

use mwae_core::anomaly::{score_dataset, write_scores_csv};
use mwae_core::nn::load_checkpoint;
use mwae_core::Result;

use crate::config::archive_config;
use crate::io::{adapt_channels, check_size, load_dataset};

#[derive(Parser)]
pub struct Args {
    /// Trained model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset bundle file or raw sample directory.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV file to write (sample_id,label,s_x,s_z for every sample).
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict s_x to leaf-mask pixels.
    #[arg(long, default_value_t = false)]
    pub masked: bool,
    #[arg(long, default_value_t = 512)]
    pub ingest_size: usize,
}

#[derive(Serialize)]
struct ResolvedConfig {
    checkpoint: String,
    data: String,
    masked: bool,
}

pub fn run(args: Args) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.data, args.ingest_size)?;
    let dataset = adapt_channels(&model, dataset)?;
    check_size(&model, &dataset)?;

    let indices: Vec<usize> = (0..dataset.len()).collect();
    let scores = score_dataset(&model, &dataset, &indices, args.masked)?;
    for s in &scores {
        if s.dead_bottleneck {
            eprintln!("warning: dead bottleneck on sample '{}' (s_z = 0)", s.sample_id);
        }
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(File::create(&args.out)?);
    write_scores_csv(&scores, &mut w)?;
    archive_config(
        &ResolvedConfig {
            checkpoint: args.checkpoint.display().to_string(),
            data: args.data.display().to_string(),
            masked: args.masked,
        },
        &args.out.with_extension("config.toml"),
    )?;
    println!("scored {} samples to {}", scores.len(), args.out.display());
    Ok(())
}
