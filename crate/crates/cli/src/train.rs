//! `train` and `sweep`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use fairrank::data::Dataset;
use fairrank::fairness::DisparityKind;
use fairrank::trainer::{evaluate, train, EvalMetrics, RunRecord, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{
    load_dataset, prepare_dir, sidecar, write_csv, write_json, write_text, RunSummary, SplitMetrics, SummaryRow,
};
use crate::settings::{echo, train_config, Settings, TrainFlags, SWEEP_KEYS, TRAIN_KEYS};

const TEST_SEED_SALT: u64 = 0x7e57;

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Run directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Comma-separated lambda grid (required here or in the config file)
    #[arg(long)]
    pub lambdas: Option<String>,
    /// Comma-separated training seeds (default: the `seed` setting)
    #[arg(long)]
    pub seeds: Option<String>,
    /// Runs executed concurrently
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

pub struct Splits {
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Option<Dataset>,
}

fn load_split(s: &Settings, key: &str, needs_groups: bool) -> Result<Option<Dataset>> {
    let Some(data) = s.path(key) else {
        return Ok(None);
    };
    let groups = s.path(&format!("{key}-groups"));
    let ds = load_dataset(&data, groups.as_deref())?;
    if needs_groups && !ds.has_groups() {
        bail!(
            "group disparity needs group labels for {key}: pass --{key}-groups or provide {}",
            sidecar(&data).display()
        );
    }
    Ok(Some(ds))
}

/// Loads every configured split, failing before any training if group
/// labels are required but missing.
pub fn load_splits(s: &Settings, config: &TrainConfig) -> Result<Splits> {
    let needs_groups = matches!(config.disparity, Some(d) if d.kind == DisparityKind::Group);
    let train = load_split(s, "train", needs_groups)?.ok_or_else(|| anyhow!("no training set: pass --train"))?;
    Ok(Splits {
        train,
        validation: load_split(s, "validation", needs_groups)?,
        test: load_split(s, "test", needs_groups)?,
    })
}

fn split_metrics(split: &str, m: &EvalMetrics) -> SplitMetrics {
    SplitMetrics {
        split: split.into(),
        ndcg: m.ndcg,
        err: Some(m.err),
        disparity: m.disparity,
    }
}

/// Trains one model and writes its run directory (which must exist).
fn run_one(config: &TrainConfig, settings: &Settings, splits: &Splits, dir: &Path) -> Result<RunSummary<RunRecord>> {
    write_text(&dir.join("config.txt"), &echo(config, settings))?;
    let record = train(&splits.train, splits.validation.as_ref(), config)?;

    let mut ckpt = BufWriter::new(File::create(dir.join("model.ckpt"))?);
    record.model.write_checkpoint(&mut ckpt)?;
    ckpt.flush()?;
    write_csv(&dir.join("epochs.csv"), &record.epochs)?;

    let mut splits_out = vec![split_metrics("train", &record.train)];
    if splits.validation.is_some() {
        splits_out.push(split_metrics("validation", &record.validation));
    }
    if let Some(test) = &splits.test {
        let eval = evaluate(
            &record.model,
            test,
            config.metric,
            config.disparity,
            config.eval_samples,
            config.seed.wrapping_add(TEST_SEED_SALT),
        )?;
        splits_out.push(split_metrics("test", &eval.metrics));
    }
    let summary = RunSummary {
        method: "fair-pg-rank".into(),
        lambda: config.lambda,
        seed: config.seed,
        delta_lambda: record.delta_lambda,
        splits: splits_out,
        details: record,
    };
    write_json(&dir.join("run.json"), &summary)?;
    write_csv(&dir.join("summary.csv"), &summary.rows())?;
    Ok(summary)
}

pub fn run_train(args: TrainArgs) -> Result<()> {
    let settings = args.flags.settings(TRAIN_KEYS)?;
    let config = train_config(&settings)?;
    let splits = load_splits(&settings, &config)?;
    prepare_dir(&args.out, args.force)?;
    run_one(&config, &settings, &splits, &args.out)?;
    Ok(())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub lambda: f64,
    pub split: String,
    pub runs: usize,
    pub ndcg_mean: f64,
    pub ndcg_std: f64,
    pub err_mean: Option<f64>,
    pub err_std: Option<f64>,
    pub disparity_mean: Option<f64>,
    pub disparity_std: Option<f64>,
    pub delta_lambda_mean: Option<f64>,
    pub delta_lambda_std: Option<f64>,
}

/// Per-(lambda, split) mean and std over seeds, in grid order. Optional
/// columns are filled only when every run reports them.
pub fn aggregate(lambdas: &[f64], rows: &[SummaryRow]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for &lambda in lambdas {
        for split in ["train", "validation", "test"] {
            let group: Vec<&SummaryRow> = rows.iter().filter(|r| r.lambda == lambda && r.split == split).collect();
            if group.is_empty() {
                continue;
            }
            let opt = |f: fn(&SummaryRow) -> Option<f64>| -> (Option<f64>, Option<f64>) {
                match group.iter().map(|r| f(r)).collect::<Option<Vec<f64>>>() {
                    Some(v) => {
                        let (m, s) = mean_std(&v);
                        (Some(m), Some(s))
                    }
                    None => (None, None),
                }
            };
            let (ndcg_mean, ndcg_std) = mean_std(&group.iter().map(|r| r.ndcg).collect::<Vec<_>>());
            let (err_mean, err_std) = opt(|r| r.err);
            let (disparity_mean, disparity_std) = opt(|r| r.disparity);
            let (delta_lambda_mean, delta_lambda_std) = opt(|r| r.delta_lambda);
            out.push(AggregateRow {
                lambda,
                split: split.into(),
                runs: group.len(),
                ndcg_mean,
                ndcg_std,
                err_mean,
                err_std,
                disparity_mean,
                disparity_std,
                delta_lambda_mean,
                delta_lambda_std,
            });
        }
    }
    out
}

#[derive(Serialize)]
struct Failure {
    lambda: f64,
    seed: u64,
    error: String,
}

#[derive(Serialize)]
struct SweepManifest {
    lambdas: Vec<f64>,
    seeds: Vec<u64>,
    runs: Vec<String>,
    failures: Vec<Failure>,
}

pub fn run_dir_name(lambda: f64, seed: u64) -> String {
    format!("lambda-{lambda}_seed-{seed}")
}

pub fn run_sweep(args: SweepArgs) -> Result<()> {
    let known: Vec<&str> = TRAIN_KEYS.iter().chain(SWEEP_KEYS).copied().collect();
    let mut settings = args.flags.settings(&known)?;
    settings.set("lambdas", args.lambdas.clone());
    settings.set("seeds", args.seeds.clone());
    let base = train_config(&settings)?;
    let lambdas: Vec<f64> = settings
        .list("lambdas")?
        .filter(|l: &Vec<f64>| !l.is_empty())
        .ok_or_else(|| anyhow!("the lambda grid is empty: pass --lambdas"))?;
    let seeds: Vec<u64> = settings
        .list("seeds")?
        .filter(|s: &Vec<u64>| !s.is_empty())
        .unwrap_or(vec![base.seed]);
    if lambdas.iter().map(|l| l.to_bits()).collect::<BTreeSet<_>>().len() != lambdas.len() {
        bail!("the lambda grid has duplicates");
    }
    if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
        bail!("the seed list has duplicates");
    }
    if args.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    for &l in &lambdas {
        TrainConfig {
            lambda: l,
            ..base.clone()
        }
        .validate()?;
    }
    let splits = load_splits(&settings, &base)?;
    prepare_dir(&args.out, args.force)?;

    let mut sweep_echo = echo(&base, &settings);
    let join = |v: Vec<String>| v.join(", ");
    sweep_echo.push_str(&format!(
        "lambdas = {}\n",
        join(lambdas.iter().map(f64::to_string).collect())
    ));
    sweep_echo.push_str(&format!(
        "seeds = {}\n",
        join(seeds.iter().map(u64::to_string).collect())
    ));
    write_text(&args.out.join("config.txt"), &sweep_echo)?;

    let grid: Vec<(f64, u64)> = lambdas
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build()?;
    let results: Vec<Result<RunSummary<RunRecord>>> = pool.install(|| {
        grid.par_iter()
            .map(|&(lambda, seed)| {
                let config = TrainConfig {
                    lambda,
                    seed,
                    ..base.clone()
                };
                let dir = args.out.join(run_dir_name(lambda, seed));
                prepare_dir(&dir, false)?;
                run_one(&config, &settings, &splits, &dir)
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (&(lambda, seed), result) in grid.iter().zip(results) {
        match result {
            Ok(summary) => {
                rows.extend(summary.rows());
                runs.push(run_dir_name(lambda, seed));
            }
            Err(e) => failures.push(Failure {
                lambda,
                seed,
                error: format!("{e:#}"),
            }),
        }
    }
    write_csv(&args.out.join("summary.csv"), &rows)?;
    write_csv(&args.out.join("aggregate.csv"), &aggregate(&lambdas, &rows))?;
    let failed = failures.len();
    write_json(
        &args.out.join("manifest.json"),
        &SweepManifest {
            lambdas,
            seeds,
            runs,
            failures,
        },
    )
    .context("writing the sweep manifest")?;
    if failed > 0 {
        bail!(
            "{failed} of {} runs failed; see {}",
            grid.len(),
            args.out.join("manifest.json").display()
        );
    }
    Ok(())
}
