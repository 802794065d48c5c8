use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::Parser;
use serde::Serialize;

use mwae_core::anomaly::{
    evaluate_models, plot_roc_curves, write_auc_table_csv, write_roc_csv, write_scores_csv,
};
use mwae_core::data::{split, SplitMode, SplitSpec};
use mwae_core::nn::load_checkpoint;
use mwae_core::{Error, ModelState, Result};

use crate::config::archive_config;
use crate::io::{check_size, load_dataset};

#[derive(Parser)]
pub struct Args {
    /// Trained checkpoints to compare (variant names come from the file
    /// stems).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    /// Dataset bundle file or raw sample directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluation pool: test-diseased re-derives the anomaly split and
    /// scores its healthy test part plus every diseased sample; all
    /// scores everything.
    #[arg(long, value_enum, default_value_t = EvalSet::TestDiseased)]
    pub eval_set: EvalSet,
    /// Seed for re-deriving the split; defaults to the first
    /// checkpoint's training seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Restrict s_x to leaf-mask pixels.
    #[arg(long, default_value_t = false)]
    pub masked: bool,
    /// Also draw roc.png with every curve.
    #[arg(long, default_value_t = false)]
    pub plot: bool,
    #[arg(long, default_value_t = 512)]
    pub ingest_size: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSet {
    TestDiseased,
    All,
}

#[derive(Serialize)]
struct ResolvedConfig {
    checkpoints: Vec<String>,
    data: String,
    eval_set: EvalSet,
    split_seed: u64,
    masked: bool,
}

fn stem(path: &PathBuf) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::data(format!("cannot name variant from {}", path.display())))
}

pub fn run(args: Args) -> Result<()> {
    if args.checkpoints.is_empty() {
        return Err(Error::parameter("at least one checkpoint is required".to_string()));
    }
    let mut models: Vec<(String, ModelState)> = Vec::new();
    for path in &args.checkpoints {
        let name = stem(path)?;
        if models.iter().any(|(n, _)| n == &name) {
            return Err(Error::parameter(format!(
                "variant name '{name}' appears twice; rename a checkpoint file"
            )));
        }
        models.push((name, load_checkpoint(path)?));
    }

    let dataset = load_dataset(&args.data, args.ingest_size)?;
    for (name, model) in &models {
        let have = dataset.samples[0].channels();
        if model.spec.input_channels != have {
            return Err(Error::data(format!(
                "checkpoint '{name}' expects {} channels, dataset has {have}",
                model.spec.input_channels
            )));
        }
        check_size(model, &dataset)?;
    }

    let split_seed = args.split_seed.unwrap_or(models[0].1.rng_seed);
    let eval_indices: Vec<usize> = match args.eval_set {
        EvalSet::All => (0..dataset.len()).collect(),
        EvalSet::TestDiseased => {
            let parts = split(
                &dataset,
                &SplitSpec {
                    mode: SplitMode::Anomaly,
                    seed: split_seed,
                },
            )?;
            let mut pool = parts.test.clone();
            pool.extend(&parts.anomalous);
            pool.sort_unstable();
            pool
        }
    };
    if eval_indices.is_empty() {
        return Err(Error::data("evaluation pool is empty"));
    }

    let comparison = evaluate_models(&models, &dataset, &eval_indices, args.masked)?;

    std::fs::create_dir_all(&args.out)?;
    for v in &comparison.variants {
        for s in &v.scores {
            if s.dead_bottleneck {
                eprintln!(
                    "warning: {}: dead bottleneck on sample '{}' (s_z = 0)",
                    v.name, s.sample_id
                );
            }
        }
        let mut w = BufWriter::new(File::create(args.out.join(format!("scores_{}.csv", v.name)))?);
        write_scores_csv(&v.scores, &mut w)?;
        let mut w = BufWriter::new(File::create(args.out.join(format!("roc_{}_sx.csv", v.name)))?);
        write_roc_csv(&v.roc_sx, &mut w)?;
        let mut w = BufWriter::new(File::create(args.out.join(format!("roc_{}_sz.csv", v.name)))?);
        write_roc_csv(&v.roc_sz, &mut w)?;
        println!(
            "{}: AUC(s_x) {:.5}, AUC(s_z) {:.5}",
            v.name, v.roc_sx.auc, v.roc_sz.auc
        );
    }
    let mut w = BufWriter::new(File::create(args.out.join("auc_summary.csv"))?);
    write_auc_table_csv(&comparison, &mut w)?;
    println!(
        "best by s_x: {}; best by s_z: {}",
        comparison.best_sx, comparison.best_sz
    );

    if args.plot {
        let curves: Vec<(String, mwae_core::RocCurve)> = comparison
            .variants
            .iter()
            .map(|v| (v.name.clone(), v.roc_sx.clone()))
            .collect();
        plot_roc_curves(&curves, &args.out.join("roc.png"))?;
    }

    archive_config(
        &ResolvedConfig {
            checkpoints: args.checkpoints.iter().map(|p| p.display().to_string()).collect(),
            data: args.data.display().to_string(),
            eval_set: args.eval_set,
            split_seed,
            masked: args.masked,
        },
        &args.out.join("config.toml"),
    )?;
    Ok(())
}
