use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::Parser;
use serde::Serialize;

use mwae_core::cluster::{
    cluster_with_metrics, export_feature_maps, extract_features, rank_features,
    write_assignments_csv, write_metrics_csv, write_ranking_csv, FeatureSelection,
    DEFAULT_RESTARTS,
};
use mwae_core::data::{split, Dataset, SplitMode, SplitSpec};
use mwae_core::nn::load_checkpoint;
use mwae_core::{Error, Result, Rng};

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
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Cluster counts to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 3, 4])]
    pub k: Vec<usize>,
    /// all | auto (rank single features, keep the best) | 1-based
    /// comma-separated feature indices.
    #[arg(long, default_value = "all")]
    pub features: String,
    /// Which samples to cluster: non-test re-derives the clustering
    /// split and drops its test part; all uses every sample.
    #[arg(long, value_enum, default_value_t = Scope::NonTest)]
    pub scope: Scope,
    /// Split/restart seed; defaults to the checkpoint's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also export the bottleneck feature-map grid of one sample.
    #[arg(long, default_value_t = false)]
    pub export_maps: bool,
    /// Sample id for the feature-map grid (default: first in scope).
    #[arg(long)]
    pub map_sample: Option<String>,
    #[arg(long, default_value_t = 512)]
    pub ingest_size: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    NonTest,
    All,
}

#[derive(Serialize)]
struct ResolvedConfig {
    checkpoint: String,
    data: String,
    k: Vec<usize>,
    features: String,
    scope: Scope,
    seed: u64,
    n_restarts: usize,
}

pub fn run(args: Args) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(&args.data, args.ingest_size)?;
    let dataset = adapt_channels(&model, dataset)?;
    check_size(&model, &dataset)?;
    let seed = args.seed.unwrap_or(model.rng_seed);

    let scoped = match args.scope {
        Scope::All => dataset,
        Scope::NonTest => {
            let parts = split(
                &dataset,
                &SplitSpec {
                    mode: SplitMode::Clustering,
                    seed,
                },
            )?;
            let mut keep: Vec<usize> = parts.train.iter().chain(&parts.val).copied().collect();
            keep.sort_unstable();
            Dataset {
                samples: keep.iter().map(|&i| dataset.samples[i].clone()).collect(),
                band_names: dataset.band_names.clone(),
                seed: dataset.seed,
            }
        }
    };
    if scoped.is_empty() {
        return Err(Error::data("no samples in clustering scope"));
    }

    std::fs::create_dir_all(&args.out)?;
    let mut rng = Rng::seed_from(seed);

    let mut ranking_artifact = None;
    let selection = match args.features.as_str() {
        "all" => FeatureSelection::All,
        "auto" => {
            let ranking = rank_features(&model, &scoped, 2, &mut rng)?;
            println!(
                "feature ranking: best single feature no.{} (aSC {:.5})",
                ranking[0].index + 1,
                ranking[0].asc
            );
            let best = ranking[0].index;
            ranking_artifact = Some(ranking);
            FeatureSelection::Indices(vec![best])
        }
        list => {
            let indices = list
                .split(',')
                .map(|tok| -> Result<usize> {
                    let one_based: usize = tok.trim().parse().map_err(|_| {
                        Error::parameter(format!("invalid feature index '{tok}'"))
                    })?;
                    if one_based == 0 {
                        return Err(Error::parameter(
                            "feature indices are 1-based; 0 is not a feature".to_string(),
                        ));
                    }
                    Ok(one_based - 1)
                })
                .collect::<Result<Vec<_>>>()?;
            FeatureSelection::Indices(indices)
        }
    };

    // compute the whole sweep before writing anything, so a degenerate
    // k leaves no partial outputs behind
    let set = extract_features(&model, &scoped, &selection)?;
    let mut results = Vec::new();
    for &k in &args.k {
        let result = cluster_with_metrics(&set, k, DEFAULT_RESTARTS, &mut rng)?;
        println!(
            "k={k}: aSC {:.5}, DB {:.5}, inertia {:.3}",
            result.asc, result.db, result.inertia
        );
        results.push(result);
    }
    if let Some(ranking) = &ranking_artifact {
        let mut w = BufWriter::new(File::create(args.out.join("ranking.csv"))?);
        write_ranking_csv(ranking, &mut w)?;
    }
    for result in &results {
        let mut w = BufWriter::new(File::create(
            args.out.join(format!("assignments_k{}.csv", result.k)),
        )?);
        write_assignments_csv(&set, &result.assignments, &mut w)?;
    }
    let mut w = BufWriter::new(File::create(args.out.join("metrics.csv"))?);
    write_metrics_csv(&results, &mut w)?;

    if args.export_maps {
        let sample = match &args.map_sample {
            Some(id) => scoped
                .samples
                .iter()
                .find(|s| &s.provenance == id)
                .ok_or_else(|| Error::data(format!("no sample named '{id}' in scope")))?,
            None => &scoped.samples[0],
        };
        let tiles = export_feature_maps(&model, sample, &args.out.join("feature_maps.png"))?;
        println!("exported {tiles} feature tiles for sample {}", sample.provenance);
    }

    archive_config(
        &ResolvedConfig {
            checkpoint: args.checkpoint.display().to_string(),
            data: args.data.display().to_string(),
            k: args.k.clone(),
            features: args.features.clone(),
            scope: args.scope,
            seed,
            n_restarts: DEFAULT_RESTARTS,
        },
        &args.out.join("config.toml"),
    )?;
    Ok(())
}
