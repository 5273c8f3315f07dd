//! `baseline`: LP post-processing and the top-1 softmax heuristic.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use fairrank::baselines::{
    default_lp_lambdas, default_top1_lambdas, evaluate_stochastic_matrix, fit_linear_regression, solve_fair_lp,
    train_top1_baseline, RegressionModel,
};
use fairrank::data::Dataset;
use fairrank::fairness::{DisparityConfig, DisparityKind, MeritFunction};
use fairrank::metrics::UtilityMetric;
use fairrank::policy::ScoringModel;
use fairrank::trainer::evaluate;
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{load_dataset, prepare_dir, write_csv, write_json, RunSummary, SplitMetrics};

#[derive(Debug, Subcommand)]
pub enum BaselineKind {
    /// Regression relevances, then a fairness-regularised LP per query
    LpPostprocess(LpArgs),
    /// Linear model trained on top-1 cross-entropy plus a group penalty
    Top1(Top1Args),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Default: <train>.groups if present
    #[arg(long)]
    pub train_groups: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub validation_groups: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub test_groups: Option<PathBuf>,
    /// Comma-separated lambda grid (default: the method's standard grid)
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// identity, square or sqrt
    #[arg(long, default_value = "identity")]
    pub merit: MeritFunction,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct LpArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fit the regression without an intercept
    #[arg(long)]
    pub no_bias: bool,
    /// Threads for the per-query LP solves
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct Top1Args {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metric whose cutoff sets the reported NDCG
    #[arg(long, default_value = "ndcg@10")]
    pub metric: UtilityMetric,
    /// Rankings sampled per query when evaluating disparity for n > 7
    #[arg(long, default_value_t = 2000)]
    pub eval_samples: usize,
}

struct Loaded {
    splits: Vec<(&'static str, Dataset)>,
}

fn load(d: &DataArgs) -> Result<Loaded> {
    let mut splits = vec![("train", load_dataset(&d.train, d.train_groups.as_deref())?)];
    if let Some(v) = &d.validation {
        splits.push(("validation", load_dataset(v, d.validation_groups.as_deref())?));
    }
    if let Some(t) = &d.test {
        splits.push(("test", load_dataset(t, d.test_groups.as_deref())?));
    }
    Ok(Loaded { splits })
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        bail!("the lambda grid is empty");
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        bail!("lambda {l} must be finite and >= 0");
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest<P: Serialize> {
    method: &'static str,
    lambdas: Vec<f64>,
    merit: String,
    params: P,
    files: Vec<String>,
}

pub fn run(kind: BaselineKind) -> Result<()> {
    match kind {
        BaselineKind::LpPostprocess(a) => lp(a),
        BaselineKind::Top1(a) => top1(a),
    }
}

#[derive(Debug, Serialize)]
struct LpQuery {
    qid: String,
    ndcg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    disparity: Option<f64>,
    /// Slack on estimated relevances.
    xi: f64,
    estimated_utility: f64,
}

#[derive(Debug, Serialize)]
struct LpSplit {
    split: String,
    queries: Vec<LpQuery>,
}

#[derive(Debug, Serialize)]
struct LpDetails<'a> {
    regression: &'a RegressionModel,
    splits: Vec<LpSplit>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn lp_split(ds: &Dataset, reg: &RegressionModel, lambda: f64, merit: MeritFunction) -> Result<Vec<LpQuery>> {
    ds.queries()
        .par_iter()
        .map(|q| {
            let groups = q.groups();
            let sol = solve_fair_lp(&reg.predict_query(q), groups.as_deref(), lambda, merit)
                .with_context(|| format!("query {}", q.qid))?;
            let (ndcg, disparity) = evaluate_stochastic_matrix(&sol.matrix, &q.relevances(), groups.as_deref(), merit)?;
            Ok(LpQuery {
                qid: q.qid.clone(),
                ndcg,
                disparity,
                xi: sol.xi,
                estimated_utility: sol.utility,
            })
        })
        .collect()
}

fn lp(a: LpArgs) -> Result<()> {
    let lambdas = a.data.lambdas.clone().unwrap_or_else(default_lp_lambdas);
    check_lambdas(&lambdas)?;
    if a.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let data = load(&a.data)?;
    let merit = a.data.merit;
    prepare_dir(&a.data.out, a.data.force)?;
    let reg = fit_linear_regression(&data.splits[0].1, !a.no_bias)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build()?;

    let mut runs = Vec::new();
    for &lambda in &lambdas {
        let mut splits = Vec::new();
        let mut metrics = Vec::new();
        for (name, ds) in &data.splits {
            let queries = pool.install(|| lp_split(ds, &reg, lambda, merit))?;
            let disparity = ds
                .has_groups()
                .then(|| mean(queries.iter().map(|q| q.disparity.unwrap_or(0.0))));
            metrics.push(SplitMetrics {
                split: name.to_string(),
                ndcg: mean(queries.iter().map(|q| q.ndcg)),
                err: None,
                disparity,
            });
            splits.push(LpSplit {
                split: name.to_string(),
                queries,
            });
        }
        runs.push(RunSummary {
            method: "lp-postprocess".into(),
            lambda,
            seed: 0,
            delta_lambda: metrics[0].disparity,
            splits: metrics,
            details: LpDetails {
                regression: &reg,
                splits,
            },
        });
    }
    let rows: Vec<_> = runs.iter().flat_map(|r| r.rows()).collect();
    write_csv(&a.data.out.join("summary.csv"), &rows)?;
    write_json(&a.data.out.join("runs.json"), &runs)?;
    #[derive(Serialize)]
    struct Params {
        regression_bias: bool,
    }
    write_json(
        &a.data.out.join("manifest.json"),
        &Manifest {
            method: "lp-postprocess",
            lambdas,
            merit: merit.to_string(),
            params: Params {
                regression_bias: !a.no_bias,
            },
            files: vec!["summary.csv".into(), "runs.json".into(), "manifest.json".into()],
        },
    )
}

#[derive(Debug, Serialize)]
struct Top1Details {
    model: ScoringModel,
    losses: Vec<f64>,
    checkpoint: String,
}

fn top1(a: Top1Args) -> Result<()> {
    let lambdas = a.data.lambdas.clone().unwrap_or_else(default_top1_lambdas);
    check_lambdas(&lambdas)?;
    let data = load(&a.data)?;
    for (name, ds) in &data.splits {
        if !ds.has_groups() {
            bail!(
                "the top-1 baseline needs group labels for {name}: pass --{name}-groups or provide a .groups sidecar"
            );
        }
    }
    let disparity = Some(DisparityConfig {
        kind: DisparityKind::Group,
        merit: a.data.merit,
    });
    prepare_dir(&a.data.out, a.data.force)?;

    let mut runs = Vec::new();
    let mut files = Vec::new();
    for &lambda in &lambdas {
        let result = train_top1_baseline(&data.splits[0].1, lambda, a.lr, a.epochs, a.seed)?;
        let mut metrics = Vec::new();
        for (name, ds) in &data.splits {
            let eval = evaluate(&result.model, ds, a.metric, disparity, a.eval_samples, a.seed)?;
            metrics.push(SplitMetrics {
                split: name.to_string(),
                ndcg: eval.metrics.ndcg,
                err: Some(eval.metrics.err),
                disparity: eval.metrics.disparity,
            });
        }
        let checkpoint = format!("top1-lambda-{lambda}.ckpt");
        let mut out = BufWriter::new(File::create(a.data.out.join(&checkpoint))?);
        result.model.write_checkpoint(&mut out)?;
        out.flush()?;
        files.push(checkpoint.clone());
        runs.push(RunSummary {
            method: "top1".into(),
            lambda,
            seed: a.seed,
            delta_lambda: metrics[0].disparity,
            splits: metrics,
            details: Top1Details {
                model: result.model,
                losses: result.losses,
                checkpoint,
            },
        });
    }
    let rows: Vec<_> = runs.iter().flat_map(|r| r.rows()).collect();
    write_csv(&a.data.out.join("summary.csv"), &rows)?;
    write_json(&a.data.out.join("runs.json"), &runs)?;
    files.extend(["summary.csv".into(), "runs.json".into(), "manifest.json".into()]);
    #[derive(Serialize)]
    struct Params {
        lr: f64,
        epochs: usize,
        seed: u64,
        metric: String,
        eval_samples: usize,
    }
    write_json(
        &a.data.out.join("manifest.json"),
        &Manifest {
            method: "top1",
            lambdas,
            merit: a.data.merit.to_string(),
            params: Params {
                lr: a.lr,
                epochs: a.epochs,
                seed: a.seed,
                metric: a.metric.to_string(),
                eval_samples: a.eval_samples,
            },
            files,
        },
    )
}
