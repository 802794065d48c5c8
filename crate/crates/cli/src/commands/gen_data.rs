use std::path::PathBuf;

use clap::Parser;
use serde::Serialize;

use mwae_core::data::{bundle_index_json, generate_synthetic, save_bundle, Severity};
use mwae_core::{Result, Rng};

use crate::config::archive_config;

#[derive(Parser, Serialize)]
pub struct Args {
    /// Healthy leaves to generate.
    #[arg(long, default_value_t = 64)]
    pub n_healthy: usize,
    /// Diseased leaves to generate (severities alternate severe/mild).
    #[arg(long, default_value_t = 0)]
    pub n_diseased: usize,
    /// Square image size; a power of two, at least 32.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bundle file to write; the JSON index and config archive land
    /// beside it.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<()> {
    let mut rng = Rng::seed_from(args.seed);
    let dataset = generate_synthetic(args.n_healthy, args.n_diseased, args.size, &mut rng)?;
    save_bundle(&dataset, &args.out)?;
    std::fs::write(
        args.out.with_extension("index.json"),
        bundle_index_json(&dataset)? + "\n",
    )?;
    archive_config(&args, &args.out.with_extension("config.toml"))?;

    let severe = dataset
        .samples
        .iter()
        .filter(|s| s.severity == Some(Severity::Severe))
        .count();
    let mild = dataset
        .samples
        .iter()
        .filter(|s| s.severity == Some(Severity::Mild))
        .count();
    println!(
        "wrote {} samples ({} healthy, {} diseased: {severe} severe, {mild} mild) to {}",
        dataset.len(),
        args.n_healthy,
        args.n_diseased,
        args.out.display()
    );
    Ok(())
}
