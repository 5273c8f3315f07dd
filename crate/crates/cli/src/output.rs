//! Run directories, dataset loading and the shared summary schema.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fairrank::data::{parse_group_file, parse_letor, Dataset};
use serde::Serialize;

/// Creates `dir` for a run's outputs. An existing non-empty directory is
/// an error unless `force`, in which case it is replaced.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = !dir.is_dir() || fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            bail!("{} already exists; pass --force to overwrite", dir.display());
        }
        if occupied {
            if dir.is_dir() {
                fs::remove_dir_all(dir)?;
            } else {
                fs::remove_file(dir)?;
            }
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// `<data>.groups` next to a LETOR file.
pub fn sidecar(data: &Path) -> PathBuf {
    data.with_extension("groups")
}

/// Loads a LETOR file plus its group labels, from `groups` if given, else
/// from the default sidecar when one exists.
pub fn load_dataset(data: &Path, groups: Option<&Path>) -> Result<Dataset> {
    let file = File::open(data).with_context(|| format!("opening {}", data.display()))?;
    let ds = parse_letor(BufReader::new(file), None).with_context(|| format!("parsing {}", data.display()))?;
    let side = sidecar(data);
    let groups = match groups {
        Some(g) => Some(g.to_path_buf()),
        None if side.is_file() => Some(side),
        None => None,
    };
    match groups {
        Some(g) => {
            let file = File::open(&g).with_context(|| format!("opening {}", g.display()))?;
            parse_group_file(BufReader::new(file), &ds).with_context(|| format!("parsing {}", g.display()))
        }
        None => Ok(ds),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Metrics of one method on one split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub split: String,
    pub ndcg: f64,
    /// Absent for methods that output a position matrix rather than a
    /// ranking.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disparity: Option<f64>,
}

/// Summary of one run, shared by the trainer and the baselines.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary<T: Serialize> {
    pub method: String,
    pub lambda: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_lambda: Option<f64>,
    pub splits: Vec<SplitMetrics>,
    pub details: T,
}

/// One row of `summary.csv`; the column order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub lambda: f64,
    pub seed: u64,
    pub split: String,
    pub ndcg: f64,
    pub err: Option<f64>,
    pub disparity: Option<f64>,
    pub delta_lambda: Option<f64>,
}

impl<T: Serialize> RunSummary<T> {
    pub fn rows(&self) -> Vec<SummaryRow> {
        self.splits
            .iter()
            .map(|s| SummaryRow {
                lambda: self.lambda,
                seed: self.seed,
                split: s.split.clone(),
                ndcg: s.ndcg,
                err: s.err,
                disparity: s.disparity,
                delta_lambda: self.delta_lambda,
            })
            .collect()
    }
}
