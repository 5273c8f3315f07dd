//! Position bias, rankings, and ranking quality metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{policy_expectation, Estimation, RankingPolicy};

/// A permutation of candidate indices, most-attended position first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ranking(Vec<usize>);

impl Ranking {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &d in &order {
            if d >= n || seen[d] {
                return Err(Error::InvalidPermutation { n, order });
            }
            seen[d] = true;
        }
        Ok(Self(order))
    }

    pub(crate) fn new_unchecked(order: Vec<usize>) -> Self {
        debug_assert!(Ranking::new(order.clone()).is_ok());
        Self(order)
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 0-based position of every document.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.0.len()];
        for (p, &d) in self.0.iter().enumerate() {
            pos[d] = p;
        }
        pos
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.0.len() != n {
            return Err(Error::LengthMismatch {
                expected: self.0.len(),
                found: n,
            });
        }
        Ok(())
    }
}

/// Every permutation of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Ranking> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(Ranking(cur.clone()));
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// Attention at 1-based position `j`: `1 / log2(1 + j)`.
pub fn position_bias(j: usize) -> Result<f64> {
    if j < 1 {
        return Err(Error::InvalidParam("positions are 1-based".into()));
    }
    Ok(bias(j))
}

#[inline]
pub(crate) fn bias(j: usize) -> f64 {
    1.0 / ((1 + j) as f64).log2()
}

/// Position-bias values `v_1..v_n`.
pub fn position_biases(n: usize) -> Vec<f64> {
    (1..=n).map(bias).collect()
}

#[inline]
pub(crate) fn gain(rel: f64) -> f64 {
    rel.exp2() - 1.0
}

fn dcg_at(order: &[usize], rels: &[f64], k: usize) -> f64 {
    order
        .iter()
        .take(k)
        .enumerate()
        .map(|(p, &d)| gain(rels[d]) * bias(p + 1))
        .sum()
}

/// Relevance-sorted order (descending, ties by index).
pub fn ideal_ranking(rels: &[f64]) -> Ranking {
    let mut order: Vec<usize> = (0..rels.len()).collect();
    order.sort_by(|&a, &b| rels[b].total_cmp(&rels[a]).then(a.cmp(&b)));
    Ranking(order)
}

pub fn dcg(ranking: &Ranking, rels: &[f64]) -> Result<f64> {
    ranking.check_len(rels.len())?;
    Ok(dcg_at(ranking.order(), rels, rels.len()))
}

/// DCG normalised by the ideal DCG, both truncated at `k`. Zero when the
/// ideal DCG is zero.
pub fn ndcg(ranking: &Ranking, rels: &[f64], k: Option<usize>) -> Result<f64> {
    ranking.check_len(rels.len())?;
    let k = k.unwrap_or(rels.len()).min(rels.len());
    let ideal = dcg_at(ideal_ranking(rels).order(), rels, k);
    if ideal <= 0.0 {
        return Ok(0.0);
    }
    Ok(dcg_at(ranking.order(), rels, k) / ideal)
}

/// Expected reciprocal rank with stopping probability
/// `(2^rel - 1) / 2^max_grade`.
pub fn err(ranking: &Ranking, rels: &[f64], max_grade: f64) -> Result<f64> {
    ranking.check_len(rels.len())?;
    if let Some(&m) = rels.iter().find(|&&r| r > max_grade) {
        return Err(Error::InvalidParam(format!(
            "relevance {m} exceeds max_grade {max_grade}"
        )));
    }
    let denom = max_grade.exp2();
    let mut not_stopped = 1.0;
    let mut total = 0.0;
    for (p, &d) in ranking.order().iter().enumerate() {
        let stop = gain(rels[d]) / denom;
        total += not_stopped * stop / (p + 1) as f64;
        not_stopped *= 1.0 - stop;
    }
    Ok(total)
}

/// Relevance-weighted mean position (1-based). Lower is better.
pub fn avg_rank(ranking: &Ranking, rels: &[f64]) -> Result<f64> {
    ranking.check_len(rels.len())?;
    let total: f64 = rels.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidParam("average rank needs a relevant document".into()));
    }
    let weighted: f64 = ranking
        .order()
        .iter()
        .enumerate()
        .map(|(p, &d)| rels[d] * (p + 1) as f64)
        .sum();
    Ok(weighted / total)
}

/// The ranking utility optimised by training and reported by evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityMetric {
    Dcg,
    Ndcg { k: Option<usize> },
    Err { max_grade: f64 },
    AvgRank,
}

impl UtilityMetric {
    pub fn value(&self, ranking: &Ranking, rels: &[f64]) -> Result<f64> {
        match *self {
            UtilityMetric::Dcg => dcg(ranking, rels),
            UtilityMetric::Ndcg { k } => ndcg(ranking, rels, k),
            UtilityMetric::Err { max_grade } => err(ranking, rels, max_grade),
            UtilityMetric::AvgRank => avg_rank(ranking, rels),
        }
    }

    /// Value as a quantity to maximise: average rank is negated, and is 0
    /// when no document is relevant.
    pub fn reward(&self, ranking: &Ranking, rels: &[f64]) -> Result<f64> {
        match self {
            UtilityMetric::AvgRank if rels.iter().all(|&r| r <= 0.0) => {
                ranking.check_len(rels.len())?;
                Ok(0.0)
            }
            UtilityMetric::AvgRank => avg_rank(ranking, rels).map(|v| -v),
            _ => self.value(ranking, rels),
        }
    }
}

impl fmt::Display for UtilityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilityMetric::Dcg => write!(f, "dcg"),
            UtilityMetric::Ndcg { k: None } => write!(f, "ndcg"),
            UtilityMetric::Ndcg { k: Some(k) } => write!(f, "ndcg@{k}"),
            UtilityMetric::Err { max_grade } => write!(f, "err:{max_grade}"),
            UtilityMetric::AvgRank => write!(f, "avgrank"),
        }
    }
}

impl FromStr for UtilityMetric {
    type Err = Error;

    /// Accepts `dcg`, `ndcg`, `ndcg@K`, `err`, `err:GRADE`, `avgrank`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || Error::InvalidParam(format!("unknown metric {s:?}"));
        match s.as_str() {
            "dcg" => Ok(UtilityMetric::Dcg),
            "ndcg" => Ok(UtilityMetric::Ndcg { k: None }),
            "err" => Ok(UtilityMetric::Err { max_grade: 4.0 }),
            "avgrank" | "avg_rank" => Ok(UtilityMetric::AvgRank),
            _ => {
                if let Some(k) = s.strip_prefix("ndcg@") {
                    let k: usize = k.parse().map_err(|_| bad())?;
                    if k == 0 {
                        return Err(Error::InvalidParam("NDCG cutoff must be >= 1".into()));
                    }
                    Ok(UtilityMetric::Ndcg { k: Some(k) })
                } else if let Some(g) = s.strip_prefix("err:") {
                    Ok(UtilityMetric::Err {
                        max_grade: g.parse().map_err(|_| bad())?,
                    })
                } else {
                    Err(bad())
                }
            }
        }
    }
}

/// Expected metric value of a stochastic ranking policy.
pub fn expected_utility<P: RankingPolicy>(
    policy: &P,
    rels: &[f64],
    metric: UtilityMetric,
    estimation: Estimation,
) -> Result<f64> {
    if policy.num_docs() != rels.len() {
        return Err(Error::LengthMismatch {
            expected: policy.num_docs(),
            found: rels.len(),
        });
    }
    let v = policy_expectation(policy, estimation, 1, |r| Ok(vec![metric.value(r, rels)?]))?;
    Ok(v[0])
}
