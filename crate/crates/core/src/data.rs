//! Queries, candidate sets and datasets, plus the text formats and generators
//! that produce them.
//!
//! Datasets are immutable once built; every constructor validates the shape
//! invariants (non-empty candidate sets, one feature width, finite
//! non-negative relevances).

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::distributions::{Distribution, Open01};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate document of a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub features: Vec<f64>,
    pub relevance: f64,
    /// Group membership, 0 (majority) or 1 (minority), when known.
    pub group: Option<u8>,
}

/// A query and its candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub qid: String,
    pub docs: Vec<Document>,
}

impl Query {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn relevances(&self) -> Vec<f64> {
        self.docs.iter().map(|d| d.relevance).collect()
    }

    /// Group ids of every document, or `None` if any document lacks one.
    pub fn groups(&self) -> Option<Vec<u8>> {
        self.docs.iter().map(|d| d.group).collect()
    }

    pub fn features(&self) -> impl Iterator<Item = &[f64]> {
        self.docs.iter().map(|d| d.features.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    queries: Vec<Query>,
    feature_dim: usize,
    has_groups: bool,
}

impl Dataset {
    /// Validates and wraps a list of queries.
    pub fn new(queries: Vec<Query>) -> Result<Self> {
        let first = queries.first().ok_or(Error::EmptyDataset)?;
        let feature_dim = first
            .docs
            .first()
            .map(|d| d.features.len())
            .ok_or_else(|| Error::InvalidParam(format!("query {} has no documents", first.qid)))?;
        if feature_dim == 0 {
            return Err(Error::InvalidParam("feature dimension must be positive".into()));
        }
        let mut has_groups = true;
        for q in &queries {
            if q.docs.is_empty() {
                return Err(Error::InvalidParam(format!("query {} has no documents", q.qid)));
            }
            for d in &q.docs {
                if d.features.len() != feature_dim {
                    return Err(Error::DimensionMismatch {
                        expected: feature_dim,
                        found: d.features.len(),
                    });
                }
                if !d.relevance.is_finite() || d.relevance < 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "relevance {} in query {} is not finite and non-negative",
                        d.relevance, q.qid
                    )));
                }
                match d.group {
                    Some(g) if g > 1 => return Err(Error::InvalidParam(format!("group id {g} is not 0 or 1"))),
                    Some(_) => {}
                    None => has_groups = false,
                }
            }
        }
        Ok(Self {
            queries,
            feature_dim,
            has_groups,
        })
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn has_groups(&self) -> bool {
        self.has_groups
    }

    pub fn num_docs(&self) -> usize {
        self.queries.iter().map(Query::len).sum()
    }

    pub fn into_queries(self) -> Vec<Query> {
        self.queries
    }

    /// Same queries with every group label removed.
    pub fn without_groups(&self) -> Dataset {
        let queries = self
            .queries
            .iter()
            .map(|q| Query {
                qid: q.qid.clone(),
                docs: q
                    .docs
                    .iter()
                    .map(|d| Document {
                        group: None,
                        ..d.clone()
                    })
                    .collect(),
            })
            .collect();
        Dataset {
            queries,
            feature_dim: self.feature_dim,
            has_groups: false,
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Parses LETOR / SVMlight ranking text: `REL qid:QID FID:VAL ... [# comment]`.
///
/// Feature ids are 1-based. The dense width is the larger of `declared_dim`
/// and the largest id seen; absent features are 0. Documents are grouped by
/// qid in order of first appearance, whether or not lines are contiguous.
pub fn parse_letor<R: BufRead>(reader: R, declared_dim: Option<usize>) -> Result<Dataset> {
    struct Raw {
        rel: f64,
        feats: Vec<(usize, f64)>,
    }
    let mut order: Vec<(String, Vec<Raw>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut max_fid = 0usize;

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let body = match line.find('#') {
            Some(p) => &line[..p],
            None => &line[..],
        };
        let mut tokens = body.split_whitespace();
        let Some(rel_tok) = tokens.next() else {
            continue;
        };
        let rel: f64 = rel_tok
            .parse()
            .map_err(|_| parse_err(lineno, format!("relevance {rel_tok:?} is not a number")))?;
        if !rel.is_finite() || rel < 0.0 {
            return Err(parse_err(lineno, format!("relevance {rel} must be finite and >= 0")));
        }
        let qid = tokens
            .next()
            .and_then(|t| t.strip_prefix("qid:"))
            .filter(|q| !q.is_empty())
            .ok_or_else(|| parse_err(lineno, "missing qid:<id> token"))?;
        let mut feats = Vec::new();
        for tok in tokens {
            let (fid, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("feature token {tok:?} is not FID:VAL")))?;
            let fid: i64 = fid
                .parse()
                .map_err(|_| parse_err(lineno, format!("feature id {fid:?} is not an integer")))?;
            if fid <= 0 {
                return Err(parse_err(lineno, format!("feature id {fid} must be positive")));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(lineno, format!("feature value {val:?} is not a number")))?;
            if !val.is_finite() {
                return Err(parse_err(lineno, format!("feature value {val} is not finite")));
            }
            let fid = fid as usize;
            max_fid = max_fid.max(fid);
            feats.push((fid, val));
        }
        let slot = *index.entry(qid.to_string()).or_insert_with(|| {
            order.push((qid.to_string(), Vec::new()));
            order.len() - 1
        });
        order[slot].1.push(Raw { rel, feats });
    }

    if order.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = declared_dim.unwrap_or(0).max(max_fid).max(1);
    let queries = order
        .into_iter()
        .map(|(qid, raws)| Query {
            qid,
            docs: raws
                .into_iter()
                .map(|raw| {
                    let mut features = vec![0.0; dim];
                    for (fid, val) in raw.feats {
                        features[fid - 1] = val;
                    }
                    Document {
                        features,
                        relevance: raw.rel,
                        group: None,
                    }
                })
                .collect(),
        })
        .collect();
    Dataset::new(queries)
}

/// Formats a value with 17 significant digits, enough to round-trip any f64.
pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a dataset in LETOR format with every feature listed explicitly.
pub fn write_letor<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for q in dataset.queries() {
        for d in &q.docs {
            write!(out, "{} qid:{}", fmt17(d.relevance), q.qid)?;
            for (i, v) in d.features.iter().enumerate() {
                write!(out, " {}:{}", i + 1, fmt17(*v))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Attaches group labels read from a sidecar: whitespace-separated 0/1
/// integers, one per document in dataset order.
pub fn parse_group_file<R: BufRead>(mut reader: R, dataset: &Dataset) -> Result<Dataset> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let expected = dataset.num_docs();
    if tokens.len() != expected {
        return Err(Error::GroupCount {
            expected,
            found: tokens.len(),
        });
    }
    let mut groups = Vec::with_capacity(expected);
    for (index, tok) in tokens.iter().enumerate() {
        match *tok {
            "0" => groups.push(0u8),
            "1" => groups.push(1u8),
            other => {
                return Err(Error::GroupValue {
                    index,
                    value: other.to_string(),
                })
            }
        }
    }
    let mut it = groups.into_iter();
    let queries = dataset
        .queries()
        .iter()
        .map(|q| Query {
            qid: q.qid.clone(),
            docs: q
                .docs
                .iter()
                .map(|d| Document {
                    group: it.next(),
                    ..d.clone()
                })
                .collect(),
        })
        .collect();
    Dataset::new(queries)
}

/// Writes the group sidecar, one line per query.
pub fn write_groups<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    if !dataset.has_groups() {
        return Err(Error::MissingGroups);
    }
    for q in dataset.queries() {
        let line: Vec<String> = q.docs.iter().map(|d| d.group.unwrap_or(0).to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Parameters of the two-feature synthetic dataset with a corrupted minority
/// feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedParams {
    pub num_queries: usize,
    pub docs_per_query: usize,
    pub minority_prob: f64,
    pub seed: u64,
}

impl Default for SimulatedParams {
    fn default() -> Self {
        Self {
            num_queries: 100,
            docs_per_query: 10,
            minority_prob: 0.2,
            seed: 0,
        }
    }
}

/// Builds one simulated document from its draws. Relevance comes from the
/// uncorrupted features; minority documents then lose `x2`.
pub fn simulated_document(x1: f64, x2: f64, group: u8) -> Document {
    let relevance = (x1 + x2).clamp(0.0, 5.0);
    let stored_x2 = if group == 1 { 0.0 } else { x2 };
    Document {
        features: vec![x1, stored_x2],
        relevance,
        group: Some(group),
    }
}

/// Generates the synthetic group-fairness dataset.
///
/// Each document joins the minority group with probability `minority_prob`,
/// draws `x1, x2 ~ U(0, 3)`, gets relevance `clip(x1 + x2, 0, 5)` and, if it
/// is a minority document, has its stored `x2` replaced by zero.
pub fn generate_simulated(params: &SimulatedParams) -> Result<Dataset> {
    if params.num_queries == 0 || params.docs_per_query == 0 {
        return Err(Error::InvalidParam(
            "num_queries and docs_per_query must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&params.minority_prob) {
        return Err(Error::InvalidParam(format!(
            "minority_prob {} outside [0, 1]",
            params.minority_prob
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let queries = (0..params.num_queries)
        .map(|qi| {
            let docs = (0..params.docs_per_query)
                .map(|_| {
                    let group = u8::from(rng.gen_bool(params.minority_prob));
                    let x1 = 3.0 * Distribution::<f64>::sample(&Open01, &mut rng);
                    let x2: f64 = 3.0 * Distribution::<f64>::sample(&Open01, &mut rng);
                    simulated_document(x1, x2, group)
                })
                .collect();
            Query {
                qid: (qi + 1).to_string(),
                docs,
            }
        })
        .collect();
    Dataset::new(queries)
}

/// One row of a binary-labelled table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRecord {
    pub features: Vec<f64>,
    pub label: u8,
    pub group: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvertParams {
    pub candidate_size: usize,
    /// Fraction of each candidate set drawn from label-1 records.
    pub relevant_fraction: f64,
    pub num_queries: usize,
    pub seed: u64,
}

impl Default for ConvertParams {
    fn default() -> Self {
        Self {
            candidate_size: 10,
            relevant_fraction: 0.2,
            num_queries: 100,
            seed: 0,
        }
    }
}

/// Turns a binary classification table into ranking queries.
///
/// Every query holds `round(candidate_size * (1 - relevant_fraction))`
/// label-0 records and the rest label-1 records, sampled without replacement
/// inside a query and with replacement across queries.
pub fn convert_binary_table(records: &[TableRecord], params: &ConvertParams) -> Result<Dataset> {
    if params.candidate_size < 2 {
        return Err(Error::InvalidParam("candidate_size must be at least 2".into()));
    }
    if params.num_queries == 0 {
        return Err(Error::InvalidParam("num_queries must be positive".into()));
    }
    if !(0.0..=1.0).contains(&params.relevant_fraction) {
        return Err(Error::InvalidParam(format!(
            "relevant_fraction {} outside [0, 1]",
            params.relevant_fraction
        )));
    }
    if let Some(r) = records.iter().find(|r| r.label > 1) {
        return Err(Error::InvalidParam(format!("label {} is not 0 or 1", r.label)));
    }
    let num_neg = (params.candidate_size as f64 * (1.0 - params.relevant_fraction)).round() as usize;
    let num_pos = params.candidate_size - num_neg;
    let negatives: Vec<&TableRecord> = records.iter().filter(|r| r.label == 0).collect();
    let positives: Vec<&TableRecord> = records.iter().filter(|r| r.label == 1).collect();
    if negatives.len() < num_neg {
        return Err(Error::InsufficientRecords(format!(
            "need {num_neg} label-0 records per query, have {}",
            negatives.len()
        )));
    }
    if positives.len() < num_pos {
        return Err(Error::InsufficientRecords(format!(
            "need {num_pos} label-1 records per query, have {}",
            positives.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let to_doc = |r: &TableRecord| Document {
        features: r.features.clone(),
        relevance: f64::from(r.label),
        group: r.group,
    };
    let queries = (0..params.num_queries)
        .map(|qi| {
            let mut docs: Vec<Document> = negatives
                .choose_multiple(&mut rng, num_neg)
                .map(|r| to_doc(r))
                .collect();
            docs.extend(positives.choose_multiple(&mut rng, num_pos).map(|r| to_doc(r)));
            docs.shuffle(&mut rng);
            Query {
                qid: (qi + 1).to_string(),
                docs,
            }
        })
        .collect();
    Dataset::new(queries)
}

/// Reads a delimited numeric table (comma or whitespace separated). Columns
/// `label_col` and `group_col` (when given) are pulled out; the rest become
/// features. Lines starting with `#` and a non-numeric header are skipped.
pub fn parse_table<R: BufRead>(reader: R, label_col: usize, group_col: Option<usize>) -> Result<Vec<TableRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if records.is_empty() && lineno == 1 => continue,
            Err(_) => return Err(parse_err(lineno, "non-numeric field")),
        };
        let needed = label_col.max(group_col.unwrap_or(0)) + 1;
        if values.len() < needed {
            return Err(parse_err(lineno, format!("expected at least {needed} columns")));
        }
        let as_binary = |v: f64, what: &str| -> Result<u8> {
            if v == 0.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(parse_err(lineno, format!("{what} {v} is not 0 or 1")))
            }
        };
        let label = as_binary(values[label_col], "label")?;
        let group = group_col.map(|c| as_binary(values[c], "group")).transpose()?;
        let features = values
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != label_col && Some(*c) != group_col)
            .map(|(_, v)| *v)
            .collect();
        records.push(TableRecord { features, label, group });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(records)
}

/// One-hot encodes the listed categorical columns of a raw string table.
/// Categories are ordered by first appearance; other columns must parse as
/// numbers and pass through unchanged.
pub fn one_hot_encode(rows: &[Vec<String>], categorical: &[usize]) -> Result<Vec<Vec<f64>>> {
    let width = rows.first().map_or(0, Vec::len);
    let mut levels: HashMap<usize, Vec<String>> = HashMap::new();
    for row in rows {
        if row.len() != width {
            return Err(Error::LengthMismatch {
                expected: width,
                found: row.len(),
            });
        }
        for &c in categorical {
            let lv = levels.entry(c).or_default();
            if !lv.contains(&row[c]) {
                lv.push(row[c].clone());
            }
        }
    }
    rows.iter()
        .enumerate()
        .map(|(ri, row)| {
            let mut out = Vec::new();
            for (c, cell) in row.iter().enumerate() {
                if let Some(lv) = levels.get(&c) {
                    out.extend(lv.iter().map(|l| if l == cell { 1.0 } else { 0.0 }));
                } else {
                    out.push(
                        cell.trim()
                            .parse()
                            .map_err(|_| parse_err(ri + 1, format!("column {c} value {cell:?} is not numeric")))?,
                    );
                }
            }
            Ok(out)
        })
        .collect()
}

/// Per-column standardization fitted on one set of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().ok_or(Error::EmptyDataset)?.len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n as f64;
            }
        }
        // constant columns are centred but not scaled
        let std = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Random query-level split into (train, rest).
pub fn split_dataset(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.queries().len();
    if n < 2 {
        return Err(Error::InvalidParam("need at least 2 queries to split".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParam(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_idx = idx[..n_train].to_vec();
    let mut rest_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    rest_idx.sort_unstable();
    let pick = |ids: &[usize]| Dataset::new(ids.iter().map(|&i| dataset.queries()[i].clone()).collect());
    Ok((pick(&train_idx)?, pick(&rest_idx)?))
}
