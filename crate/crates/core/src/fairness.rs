//! Merit, exposure, and the individual and group disparity measures.
//!
//! A document's exposure is the expected position bias it receives under a
//! policy. Both disparities penalise a higher-merit document (or group)
//! receiving more exposure per unit of merit than a lower-merit one; giving
//! the lower-merit side extra exposure is never penalised.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bias, Ranking};
use crate::policy::{policy_expectation, Estimation, RankingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeritFunction {
    #[default]
    Identity,
    Square,
    Sqrt,
}

impl MeritFunction {
    pub fn apply(&self, rel: f64) -> f64 {
        let rel = rel.max(0.0);
        match self {
            MeritFunction::Identity => rel,
            MeritFunction::Square => rel * rel,
            MeritFunction::Sqrt => rel.sqrt(),
        }
    }

    pub fn merits(&self, rels: &[f64]) -> Vec<f64> {
        rels.iter().map(|&r| self.apply(r)).collect()
    }
}

impl fmt::Display for MeritFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeritFunction::Identity => "identity",
            MeritFunction::Square => "square",
            MeritFunction::Sqrt => "sqrt",
        })
    }
}

impl FromStr for MeritFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" => Ok(MeritFunction::Identity),
            "square" => Ok(MeritFunction::Square),
            "sqrt" => Ok(MeritFunction::Sqrt),
            other => Err(Error::InvalidParam(format!("unknown merit function {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisparityKind {
    Individual,
    Group,
}

impl fmt::Display for DisparityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DisparityKind::Individual => "individual",
            DisparityKind::Group => "group",
        })
    }
}

impl FromStr for DisparityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "individual" | "ind" => Ok(DisparityKind::Individual),
            "group" | "grp" => Ok(DisparityKind::Group),
            other => Err(Error::InvalidParam(format!("unknown disparity {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisparityConfig {
    pub kind: DisparityKind,
    pub merit: MeritFunction,
}

impl DisparityConfig {
    /// Policy-level disparity of one query from its exposures.
    pub fn measure(&self, exposures: &[f64], rels: &[f64], groups: Option<&[u8]>) -> Result<f64> {
        let merits = self.merit.merits(rels);
        match self.kind {
            DisparityKind::Individual => Ok(individual_disparity(exposures, &merits)),
            DisparityKind::Group => Ok(group_disparity(exposures, &merits, groups.ok_or(Error::MissingGroups)?)),
        }
    }
}

/// Exposure vector of a policy together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureVector {
    pub values: Vec<f64>,
    pub estimation: Estimation,
}

/// Position bias received by each document under a single ranking.
pub fn exposure_of_ranking(ranking: &Ranking) -> Vec<f64> {
    let mut out = vec![0.0; ranking.len()];
    for (p, &d) in ranking.order().iter().enumerate() {
        out[d] = bias(p + 1);
    }
    out
}

/// Expected exposure of each document under a policy.
pub fn exposure_of_policy<P: RankingPolicy>(policy: &P, estimation: Estimation) -> Result<ExposureVector> {
    let n = policy.num_docs();
    let values = policy_expectation(policy, estimation, n, |r| Ok(exposure_of_ranking(r)))?;
    Ok(ExposureVector { values, estimation })
}

/// Ordered pairs `(i, j)`, `i != j`, with `M_i >= M_j > 0`.
pub fn comparable_pairs(merits: &[f64]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, &mi) in merits.iter().enumerate() {
        for (j, &mj) in merits.iter().enumerate() {
            if i != j && mj > 0.0 && mi >= mj {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// `v_i / M_i - v_j / M_j`.
#[inline]
pub fn pair_diff(exposures: &[f64], merits: &[f64], i: usize, j: usize) -> f64 {
    exposures[i] / merits[i] - exposures[j] / merits[j]
}

/// Mean hinge violation over comparable pairs; 0 if there are none.
pub fn individual_disparity(exposures: &[f64], merits: &[f64]) -> f64 {
    let pairs = comparable_pairs(merits);
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|&(i, j)| pair_diff(exposures, merits, i, j).max(0.0))
        .sum();
    total / pairs.len() as f64
}

/// Sums of exposure and merit over the members of each group.
fn group_sums(values: &[f64], merits: &[f64], groups: &[u8]) -> ([f64; 2], [f64; 2], [usize; 2]) {
    let mut v = [0.0; 2];
    let mut m = [0.0; 2];
    let mut count = [0usize; 2];
    for ((&x, &mi), &g) in values.iter().zip(merits).zip(groups) {
        let g = usize::from(g.min(1));
        v[g] += x;
        m[g] += mi;
        count[g] += 1;
    }
    (v, m, count)
}

/// Ratio-of-means difference `v(G0)/M_G0 - v(G1)/M_G1`, or `None` when a
/// group is absent or has zero merit.
pub fn group_diff(exposures: &[f64], merits: &[f64], groups: &[u8]) -> Option<f64> {
    let (v, m, c) = group_sums(exposures, merits, groups);
    if c[0] == 0 || c[1] == 0 || m[0] <= 0.0 || m[1] <= 0.0 {
        return None;
    }
    let mean = |k: usize| (v[k] / c[k] as f64) / (m[k] / c[k] as f64);
    Some(mean(0) - mean(1))
}

/// `+1` if group 0 has strictly higher mean merit, `-1` if lower, `0` on a tie
/// or when a group is absent.
pub fn group_sign(merits: &[f64], groups: &[u8]) -> f64 {
    let (_, m, c) = group_sums(merits, merits, groups);
    if c[0] == 0 || c[1] == 0 {
        return 0.0;
    }
    let (m0, m1) = (m[0] / c[0] as f64, m[1] / c[1] as f64);
    if m0 > m1 {
        1.0
    } else if m0 < m1 {
        -1.0
    } else {
        0.0
    }
}

/// Hinge on the higher-merit group's excess exposure per unit merit.
///
/// Zero when only one group is present or either group has zero merit. When
/// mean merits tie, group 0 is treated as the higher-merit group.
pub fn group_disparity(exposures: &[f64], merits: &[f64], groups: &[u8]) -> f64 {
    let Some(diff) = group_diff(exposures, merits, groups) else {
        return 0.0;
    };
    let (_, m, c) = group_sums(merits, merits, groups);
    let higher_is_zero = m[0] / c[0] as f64 >= m[1] / c[1] as f64;
    if higher_is_zero {
        diff.max(0.0)
    } else {
        (-diff).max(0.0)
    }
}

/// Single-ranking term for one document pair.
pub fn individual_ranking_term(ranking: &Ranking, merits: &[f64], i: usize, j: usize) -> f64 {
    pair_diff(&exposure_of_ranking(ranking), merits, i, j)
}

/// Single-ranking group term in sum form:
/// `sum_G0 v_r / sum_G0 M - sum_G1 v_r / sum_G1 M`.
pub fn group_ranking_term_from_exposure(exposure: &[f64], merits: &[f64], groups: &[u8]) -> Option<f64> {
    let (v, m, c) = group_sums(exposure, merits, groups);
    if c[0] == 0 || c[1] == 0 || m[0] <= 0.0 || m[1] <= 0.0 {
        return None;
    }
    Some(v[0] / m[0] - v[1] / m[1])
}

pub fn group_ranking_term(ranking: &Ranking, merits: &[f64], groups: &[u8]) -> Option<f64> {
    group_ranking_term_from_exposure(&exposure_of_ranking(ranking), merits, groups)
}

/// Per-ranking disparity term as used inside the gradient estimators:
/// one value per comparable pair for individual fairness, a single value for
/// group fairness (empty when the group term is degenerate).
pub fn per_ranking_disparity_term(
    ranking: &Ranking,
    merits: &[f64],
    groups: Option<&[u8]>,
    kind: DisparityKind,
) -> Result<Vec<f64>> {
    if ranking.len() != merits.len() {
        return Err(Error::LengthMismatch {
            expected: ranking.len(),
            found: merits.len(),
        });
    }
    let exposure = exposure_of_ranking(ranking);
    match kind {
        DisparityKind::Individual => Ok(comparable_pairs(merits)
            .into_iter()
            .map(|(i, j)| pair_diff(&exposure, merits, i, j))
            .collect()),
        DisparityKind::Group => {
            let groups = groups.ok_or(Error::MissingGroups)?;
            Ok(group_ranking_term_from_exposure(&exposure, merits, groups)
                .into_iter()
                .collect())
        }
    }
}
