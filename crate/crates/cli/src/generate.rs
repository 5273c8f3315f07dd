//! `generate`: simulated data and binary-table conversion.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Subcommand};
use fairrank::data::{
    convert_binary_table, generate_simulated, one_hot_encode, write_groups, write_letor, ConvertParams, Dataset,
    SimulatedParams, Standardizer, TableRecord,
};
use serde::Serialize;

use crate::output::{prepare_dir, write_json};

#[derive(Debug, Subcommand)]
pub enum GenerateKind {
    /// Two-feature data where the minority group's second feature is zeroed
    Simulated(SimulatedArgs),
    /// Candidate sets sampled from a binary-labelled table
    FromTable(TableArgs),
}

#[derive(Debug, Args)]
pub struct SimulatedArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub num_queries: usize,
    #[arg(long, default_value_t = 10)]
    pub docs_per_query: usize,
    /// Probability that a document belongs to group 1
    #[arg(long, default_value_t = 0.2)]
    pub minority_prob: f64,
    /// Queries in an additional test set (0 for none)
    #[arg(long, default_value_t = 0)]
    pub test_queries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Comma- or whitespace-separated table
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the first line
    #[arg(long)]
    pub header: bool,
    /// 0-based column holding the label
    #[arg(long)]
    pub label_col: usize,
    /// Label value counted as relevant (default: the column holds 0/1)
    #[arg(long)]
    pub positive_label: Option<String>,
    /// 0-based column holding the group attribute
    #[arg(long)]
    pub group_col: Option<usize>,
    /// Group-column value mapped to group 1 (default: the column holds 0/1)
    #[arg(long)]
    pub group_one: Option<String>,
    /// 0-based columns to one-hot encode, comma separated
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<usize>,
    /// Scale every feature to zero mean and unit variance
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value_t = 10)]
    pub candidate_size: usize,
    #[arg(long, default_value_t = 0.2)]
    pub relevant_fraction: f64,
    #[arg(long, default_value_t = 100)]
    pub num_queries: usize,
    #[arg(long, default_value_t = 50)]
    pub test_queries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Serialize)]
struct Manifest<P: Serialize> {
    kind: &'static str,
    params: P,
    seed: u64,
    test_seed: Option<u64>,
    files: Vec<String>,
}

fn write_split(dir: &Path, name: &str, ds: &Dataset, files: &mut Vec<String>) -> Result<()> {
    let data = format!("{name}.letor");
    write_letor(ds, BufWriter::new(File::create(dir.join(&data))?))?;
    files.push(data);
    if ds.has_groups() {
        let groups = format!("{name}.groups");
        write_groups(ds, BufWriter::new(File::create(dir.join(&groups))?))?;
        files.push(groups);
    }
    Ok(())
}

pub fn run(kind: GenerateKind) -> Result<()> {
    match kind {
        GenerateKind::Simulated(a) => simulated(a),
        GenerateKind::FromTable(a) => from_table(a),
    }
}

fn simulated(a: SimulatedArgs) -> Result<()> {
    let params = SimulatedParams {
        num_queries: a.num_queries,
        docs_per_query: a.docs_per_query,
        minority_prob: a.minority_prob,
        seed: a.seed,
    };
    let train = generate_simulated(&params)?;
    let test_seed = (a.test_queries > 0).then(|| a.seed.wrapping_add(1));
    let test = test_seed
        .map(|seed| {
            generate_simulated(&SimulatedParams {
                num_queries: a.test_queries,
                seed,
                ..params
            })
        })
        .transpose()?;
    prepare_dir(&a.out, a.force)?;
    let mut files = Vec::new();
    write_split(&a.out, "train", &train, &mut files)?;
    if let Some(t) = &test {
        write_split(&a.out, "test", t, &mut files)?;
    }
    files.push("manifest.json".into());
    #[derive(Serialize)]
    struct Params {
        num_queries: usize,
        docs_per_query: usize,
        minority_prob: f64,
        test_queries: usize,
    }
    let manifest = Manifest {
        kind: "simulated",
        params: Params {
            num_queries: a.num_queries,
            docs_per_query: a.docs_per_query,
            minority_prob: a.minority_prob,
            test_queries: a.test_queries,
        },
        seed: a.seed,
        test_seed,
        files,
    };
    write_json(&a.out.join("manifest.json"), &manifest)
}

fn split_fields(line: &str) -> Vec<String> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|f| !f.is_empty())
        .map(str::to_string)
        .collect()
}

fn binary(field: &str, one: Option<&str>, what: &str, line: usize) -> Result<u8> {
    match one {
        Some(v) => Ok(u8::from(field == v)),
        None => match field {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => bail!("line {line}: {what} {field:?} is not 0 or 1"),
        },
    }
}

fn read_table(a: &TableArgs) -> Result<Vec<TableRecord>> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut features = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if (a.header && i == 0) || trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_fields(trimmed);
        if *width.get_or_insert(fields.len()) != fields.len() {
            bail!(
                "line {}: expected {} columns, found {}",
                i + 1,
                width.unwrap(),
                fields.len()
            );
        }
        let get = |c: usize| fields.get(c).ok_or_else(|| anyhow!("line {}: no column {c}", i + 1));
        labels.push(binary(get(a.label_col)?, a.positive_label.as_deref(), "label", i + 1)?);
        if let Some(g) = a.group_col {
            groups.push(binary(get(g)?, a.group_one.as_deref(), "group", i + 1)?);
        }
        features.push(
            fields
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != a.label_col && Some(*c) != a.group_col)
                .map(|(_, f)| f.clone())
                .collect::<Vec<String>>(),
        );
    }
    if features.is_empty() {
        bail!("{} has no data rows", a.input.display());
    }
    // categorical indices refer to the original columns
    let mut categorical = Vec::new();
    for &c in &a.categorical {
        if c == a.label_col || Some(c) == a.group_col {
            bail!("column {c} is the label or group column and cannot be a feature");
        }
        let shift = usize::from(a.label_col < c) + usize::from(a.group_col.is_some_and(|g| g < c));
        categorical.push(c - shift);
    }
    let mut rows = one_hot_encode(&features, &categorical)?;
    if a.standardize {
        let s = Standardizer::fit(&rows)?;
        for r in &mut rows {
            s.apply(r);
        }
    }
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, features)| TableRecord {
            features,
            label: labels[i],
            group: groups.get(i).copied(),
        })
        .collect())
}

fn from_table(a: TableArgs) -> Result<()> {
    let records = read_table(&a)?;
    let params = ConvertParams {
        candidate_size: a.candidate_size,
        relevant_fraction: a.relevant_fraction,
        num_queries: a.num_queries,
        seed: a.seed,
    };
    let train = convert_binary_table(&records, &params)?;
    let test_seed = (a.test_queries > 0).then(|| a.seed.wrapping_add(1));
    let test = test_seed
        .map(|seed| {
            convert_binary_table(
                &records,
                &ConvertParams {
                    num_queries: a.test_queries,
                    seed,
                    ..params
                },
            )
        })
        .transpose()?;
    prepare_dir(&a.out, a.force)?;
    let mut files = Vec::new();
    write_split(&a.out, "train", &train, &mut files)?;
    if let Some(t) = &test {
        write_split(&a.out, "test", t, &mut files)?;
    }
    files.push("manifest.json".into());
    #[derive(Serialize)]
    struct Params<'a> {
        input: String,
        header: bool,
        label_col: usize,
        positive_label: Option<&'a str>,
        group_col: Option<usize>,
        group_one: Option<&'a str>,
        categorical: &'a [usize],
        standardize: bool,
        candidate_size: usize,
        relevant_fraction: f64,
        num_queries: usize,
        test_queries: usize,
        records: usize,
    }
    let manifest = Manifest {
        kind: "from-table",
        params: Params {
            input: a.input.display().to_string(),
            header: a.header,
            label_col: a.label_col,
            positive_label: a.positive_label.as_deref(),
            group_col: a.group_col,
            group_one: a.group_one.as_deref(),
            categorical: &a.categorical,
            standardize: a.standardize,
            candidate_size: a.candidate_size,
            relevant_fraction: a.relevant_fraction,
            num_queries: a.num_queries,
            test_queries: a.test_queries,
            records: records.len(),
        },
        seed: a.seed,
        test_seed,
        files,
    };
    write_json(&a.out.join("manifest.json"), &manifest)
}
