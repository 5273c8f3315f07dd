//! `eval`: per-query report of a checkpoint on a dataset.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use fairrank::fairness::MeritFunction;
use fairrank::metrics::UtilityMetric;
use fairrank::policy::ScoringModel;
use fairrank::trainer::{evaluate, report_cutoff};
use serde::Serialize;

use crate::output::{load_dataset, prepare_dir, write_csv, write_json};
use crate::settings::parse_disparity;

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Default: <data>.groups if present
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long, default_value = "ndcg@10")]
    pub metric: UtilityMetric,
    /// none, individual or group
    #[arg(long)]
    pub disparity: Option<String>,
    #[arg(long, default_value = "identity")]
    pub merit: MeritFunction,
    #[arg(long, default_value_t = 2000)]
    pub eval_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Serialize)]
struct ReportRow {
    qid: String,
    utility: f64,
    ndcg: f64,
    err: f64,
    disparity: Option<f64>,
}

#[derive(Serialize)]
struct Report<'a> {
    checkpoint: String,
    data: String,
    metric: String,
    ndcg_cutoff: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    disparity: Option<String>,
    eval_samples: usize,
    seed: u64,
    summary: &'a fairrank::trainer::EvalSummary,
}

pub fn run(a: EvalArgs) -> Result<()> {
    let file = File::open(&a.checkpoint).with_context(|| format!("opening {}", a.checkpoint.display()))?;
    let model = ScoringModel::read_checkpoint(BufReader::new(file))
        .with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let ds = load_dataset(&a.data, a.groups.as_deref())?;
    if ds.feature_dim() != model.input_dim() {
        bail!(
            "dimension mismatch: the checkpoint expects {} features but {} has {}",
            model.input_dim(),
            a.data.display(),
            ds.feature_dim()
        );
    }
    let disparity = parse_disparity(a.disparity.clone(), a.merit)?;
    let summary = evaluate(&model, &ds, a.metric, disparity, a.eval_samples, a.seed)?;
    prepare_dir(&a.out, a.force)?;
    let rows: Vec<ReportRow> = summary
        .per_query
        .iter()
        .map(|q| ReportRow {
            qid: q.qid.clone(),
            utility: q.utility,
            ndcg: q.ndcg,
            err: q.err,
            disparity: q.disparity,
        })
        .collect();
    write_csv(&a.out.join("report.csv"), &rows)?;
    write_json(
        &a.out.join("report.json"),
        &Report {
            checkpoint: a.checkpoint.display().to_string(),
            data: a.data.display().to_string(),
            metric: a.metric.to_string(),
            ndcg_cutoff: report_cutoff(a.metric),
            disparity: disparity.map(|d| format!("{}:{}", d.kind, d.merit)),
            eval_samples: a.eval_samples,
            seed: a.seed,
            summary: &summary,
        },
    )
}
