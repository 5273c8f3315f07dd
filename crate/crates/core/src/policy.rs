//! Plackett-Luce ranking policies over differentiable scoring models.
//!
//! A scoring model maps each document's features to a real score; the
//! policy places documents top-down, each time drawing from the softmax over
//! the scores of the documents not yet placed. Everything a policy-gradient
//! trainer needs lives here: log-probabilities, sampling, the argmax
//! ranking, the gradient of `log pi(r)` with respect to the scores, the
//! entropy of the top-1 softmax, and the chain rule from score space back
//! to model parameters.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{fmt17, Query};
use crate::error::{Error, Result};
use crate::metrics::{permutations, Ranking};

/// Scores are clamped to this magnitude before any softmax stage.
pub const SCORE_CLAMP: f64 = 50.0;

/// Largest candidate set for which exact enumeration over all rankings is
/// allowed.
pub const ENUMERATION_LIMIT: usize = 7;

/// How an expectation over rankings is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Estimation {
    /// Sum over every permutation; only for `n <= ENUMERATION_LIMIT`.
    Exact,
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
    /// Exact when small enough, otherwise Monte-Carlo.
    Auto {
        samples: usize,
        seed: u64,
    },
}

/// A distribution over rankings of a fixed candidate set.
pub trait RankingPolicy {
    fn num_docs(&self) -> usize;
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Ranking;
    fn probability(&self, ranking: &Ranking) -> Result<f64>;
}

/// Plackett-Luce policy for fixed scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PlackettLuce {
    scores: Vec<f64>,
}

impl PlackettLuce {
    pub fn new(scores: Vec<f64>) -> Self {
        Self { scores }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

impl RankingPolicy for PlackettLuce {
    fn num_docs(&self) -> usize {
        self.scores.len()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Ranking {
        sample_ranking(&self.scores, rng)
    }

    fn probability(&self, ranking: &Ranking) -> Result<f64> {
        ranking_logprob(&self.scores, ranking).map(f64::exp)
    }
}

/// A policy that always returns the same ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicPolicy {
    ranking: Ranking,
}

impl DeterministicPolicy {
    pub fn new(ranking: Ranking) -> Self {
        Self { ranking }
    }
}

impl RankingPolicy for DeterministicPolicy {
    fn num_docs(&self) -> usize {
        self.ranking.len()
    }

    fn sample<R: Rng + ?Sized>(&self, _rng: &mut R) -> Ranking {
        self.ranking.clone()
    }

    fn probability(&self, ranking: &Ranking) -> Result<f64> {
        if ranking.len() != self.ranking.len() {
            return Err(Error::LengthMismatch {
                expected: self.ranking.len(),
                found: ranking.len(),
            });
        }
        Ok(if *ranking == self.ranking { 1.0 } else { 0.0 })
    }
}

/// Expectation of a vector-valued function of the ranking under `policy`.
pub fn policy_expectation<P, F>(policy: &P, estimation: Estimation, width: usize, mut f: F) -> Result<Vec<f64>>
where
    P: RankingPolicy,
    F: FnMut(&Ranking) -> Result<Vec<f64>>,
{
    let n = policy.num_docs();
    let (exact, samples, seed) = match estimation {
        Estimation::Exact => {
            if n > ENUMERATION_LIMIT {
                return Err(Error::TooLarge {
                    n,
                    limit: ENUMERATION_LIMIT,
                });
            }
            (true, 0, 0)
        }
        Estimation::MonteCarlo { samples, seed } => (false, samples, seed),
        Estimation::Auto { samples, seed } => (n <= ENUMERATION_LIMIT, samples, seed),
    };
    let mut acc = vec![0.0; width];
    if exact {
        for r in permutations(n) {
            let p = policy.probability(&r)?;
            if p == 0.0 {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(f(&r)?) {
                *a += p * v;
            }
        }
    } else {
        if samples == 0 {
            return Err(Error::InvalidParam("need at least one sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let r = policy.sample(&mut rng);
            for (a, v) in acc.iter_mut().zip(f(&r)?) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= samples as f64;
        }
    }
    Ok(acc)
}

#[inline]
fn clamp_score(s: f64) -> f64 {
    s.clamp(-SCORE_CLAMP, SCORE_CLAMP)
}

fn log_sum_exp<I: Iterator<Item = f64> + Clone>(xs: I) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `softmax(scores)` after clamping.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = scores.iter().copied().map(clamp_score).collect();
    let lse = log_sum_exp(clamped.iter().copied());
    clamped.iter().map(|s| (s - lse).exp()).collect()
}

fn check_perm(scores: &[f64], ranking: &Ranking) -> Result<()> {
    if ranking.len() != scores.len() {
        return Err(Error::InvalidPermutation {
            n: scores.len(),
            order: ranking.order().to_vec(),
        });
    }
    Ok(())
}

/// `log pi(r)`: sum over positions of the log-softmax of the placed
/// document among those still unplaced.
pub fn ranking_logprob(scores: &[f64], ranking: &Ranking) -> Result<f64> {
    check_perm(scores, ranking)?;
    let order = ranking.order();
    let s: Vec<f64> = order.iter().map(|&d| clamp_score(scores[d])).collect();
    Ok((0..s.len()).map(|i| s[i] - log_sum_exp(s[i..].iter().copied())).sum())
}

/// Draws a ranking top-down from successive softmax distributions.
pub fn sample_ranking<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> Ranking {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut order = Vec::with_capacity(scores.len());
    let mut weights = Vec::with_capacity(scores.len());
    while remaining.len() > 1 {
        let m = remaining
            .iter()
            .map(|&d| clamp_score(scores[d]))
            .fold(f64::NEG_INFINITY, f64::max);
        weights.clear();
        weights.extend(remaining.iter().map(|&d| (clamp_score(scores[d]) - m).exp()));
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                pick = k;
                break;
            }
            u -= w;
        }
        order.push(remaining.remove(pick));
    }
    order.extend(remaining);
    Ranking::new_unchecked(order)
}

/// Highest-probability ranking: descending score, ties by ascending index.
pub fn argmax_ranking(scores: &[f64]) -> Ranking {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        clamp_score(scores[b])
            .total_cmp(&clamp_score(scores[a]))
            .then(a.cmp(&b))
    });
    Ranking::new_unchecked(order)
}

/// Gradient of `ranking_logprob` with respect to the scores.
///
/// Stage `i` contributes the one-hot vector of the document placed there
/// minus the softmax over the documents still remaining, so every returned
/// vector sums to zero. The clamp is treated as the identity.
pub fn logprob_grad_scores(scores: &[f64], ranking: &Ranking) -> Result<Vec<f64>> {
    check_perm(scores, ranking)?;
    let order = ranking.order();
    let n = order.len();
    let s: Vec<f64> = order.iter().map(|&d| clamp_score(scores[d])).collect();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let lse = log_sum_exp(s[i..].iter().copied());
        grad[order[i]] += 1.0;
        for k in i..n {
            grad[order[k]] -= (s[k] - lse).exp();
        }
    }
    Ok(grad)
}

/// Entropy (natural log) of `softmax(scores)` and its gradient.
pub fn softmax_entropy(scores: &[f64]) -> (f64, Vec<f64>) {
    let clamped: Vec<f64> = scores.iter().copied().map(clamp_score).collect();
    let lse = log_sum_exp(clamped.iter().copied());
    let logp: Vec<f64> = clamped.iter().map(|s| s - lse).collect();
    let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let h = -p.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
    let grad = p.iter().zip(&logp).map(|(p, l)| -p * (l + h)).collect();
    (h, grad)
}

/// `w . x (+ b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: Option<f64>,
}

/// One hidden ReLU layer: `w_out . relu(W^T x + b_hidden) + b_out`.
///
/// `w_hidden` is `input_dim x hidden`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_hidden: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl MlpModel {
    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        let mut pre = self.b_hidden.clone();
        for (i, xi) in x.iter().enumerate() {
            let row = &self.w_hidden[i * self.hidden..(i + 1) * self.hidden];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += xi * w;
            }
        }
        pre
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoringModel {
    Linear(LinearModel),
    Mlp(MlpModel),
}

/// Architecture choice used to initialise a fresh model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Linear { bias: bool },
    Mlp { hidden: usize },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Linear { bias: false }
    }
}

impl ModelSpec {
    /// Linear weights start in (-0.001, 0.001); MLP weights in
    /// (-1/sqrt(hidden), 1/sqrt(hidden)).
    pub fn init<R: Rng + ?Sized>(&self, input_dim: usize, rng: &mut R) -> ScoringModel {
        match *self {
            ModelSpec::Linear { bias } => {
                let weights = (0..input_dim).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
                ScoringModel::Linear(LinearModel {
                    weights,
                    bias: bias.then_some(0.0),
                })
            }
            ModelSpec::Mlp { hidden } => {
                let a = 1.0 / (hidden as f64).sqrt();
                let mut draw = |k: usize| (0..k).map(|_| rng.gen_range(-a..a)).collect::<Vec<_>>();
                let w_hidden = draw(input_dim * hidden);
                let b_hidden = draw(hidden);
                let w_out = draw(hidden);
                ScoringModel::Mlp(MlpModel {
                    input_dim,
                    hidden,
                    w_hidden,
                    b_hidden,
                    w_out,
                    b_out: 0.0,
                })
            }
        }
    }
}

impl ScoringModel {
    pub fn linear(weights: Vec<f64>) -> Self {
        ScoringModel::Linear(LinearModel { weights, bias: None })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ScoringModel::Linear(m) => m.weights.len(),
            ScoringModel::Mlp(m) => m.input_dim,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            ScoringModel::Linear(m) => m.weights.len() + usize::from(m.bias.is_some()),
            ScoringModel::Mlp(m) => m.w_hidden.len() + m.b_hidden.len() + m.w_out.len() + 1,
        }
    }

    /// Flat parameter vector; the layout matches [`ScoringModel::backprop`].
    pub fn params(&self) -> Vec<f64> {
        match self {
            ScoringModel::Linear(m) => m.weights.iter().copied().chain(m.bias).collect(),
            ScoringModel::Mlp(m) => m
                .w_hidden
                .iter()
                .chain(&m.b_hidden)
                .chain(&m.w_out)
                .copied()
                .chain(std::iter::once(m.b_out))
                .collect(),
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.num_params(),
                found: params.len(),
            });
        }
        match self {
            ScoringModel::Linear(m) => {
                let d = m.weights.len();
                m.weights.copy_from_slice(&params[..d]);
                if let Some(b) = m.bias.as_mut() {
                    *b = params[d];
                }
            }
            ScoringModel::Mlp(m) => {
                let (a, rest) = params.split_at(m.w_hidden.len());
                let (b, rest) = rest.split_at(m.b_hidden.len());
                let (c, rest) = rest.split_at(m.w_out.len());
                m.w_hidden.copy_from_slice(a);
                m.b_hidden.copy_from_slice(b);
                m.w_out.copy_from_slice(c);
                m.b_out = rest[0];
            }
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn score_one(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            ScoringModel::Linear(m) => m.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + m.bias.unwrap_or(0.0),
            ScoringModel::Mlp(m) => {
                m.hidden_pre(x)
                    .iter()
                    .zip(&m.w_out)
                    .map(|(p, w)| p.max(0.0) * w)
                    .sum::<f64>()
                    + m.b_out
            }
        })
    }

    /// Scores of every document in the candidate set.
    pub fn score(&self, query: &Query) -> Result<Vec<f64>> {
        query.features().map(|x| self.score_one(x)).collect()
    }

    /// Chain rule from per-document score gradients to a flat parameter
    /// gradient: `sum_d g_d * d score(x_d) / d theta`. The ReLU subgradient at
    /// 0 is 0.
    pub fn backprop(&self, query: &Query, score_grads: &[f64]) -> Result<Vec<f64>> {
        if score_grads.len() != query.len() {
            return Err(Error::LengthMismatch {
                expected: query.len(),
                found: score_grads.len(),
            });
        }
        let mut grad = vec![0.0; self.num_params()];
        for (x, &g) in query.features().zip(score_grads) {
            self.check_dim(x)?;
            if g == 0.0 {
                continue;
            }
            match self {
                ScoringModel::Linear(m) => {
                    for (gw, xi) in grad.iter_mut().zip(x) {
                        *gw += g * xi;
                    }
                    if m.bias.is_some() {
                        grad[m.weights.len()] += g;
                    }
                }
                ScoringModel::Mlp(m) => {
                    let h = m.hidden;
                    let pre = m.hidden_pre(x);
                    let nw = m.w_hidden.len();
                    for k in 0..h {
                        let act = pre[k].max(0.0);
                        grad[nw + h + k] += g * act;
                        if pre[k] > 0.0 {
                            let delta = g * m.w_out[k];
                            grad[nw + k] += delta;
                            for (i, xi) in x.iter().enumerate() {
                                grad[i * h + k] += delta * xi;
                            }
                        }
                    }
                    grad[nw + 2 * h] += g;
                }
            }
        }
        Ok(grad)
    }

    /// Writes the text checkpoint: a versioned header, then one parameter per
    /// line with 17 significant digits.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "fairrank-checkpoint 1")?;
        match self {
            ScoringModel::Linear(m) => {
                writeln!(out, "kind linear")?;
                writeln!(out, "input_dim {}", m.weights.len())?;
                writeln!(out, "bias {}", m.bias.is_some())?;
            }
            ScoringModel::Mlp(m) => {
                writeln!(out, "kind mlp")?;
                writeln!(out, "input_dim {}", m.input_dim)?;
                writeln!(out, "hidden {}", m.hidden)?;
            }
        }
        let params = self.params();
        writeln!(out, "params {}", params.len())?;
        for p in params {
            writeln!(out, "{}", fmt17(p))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = reader.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file"))?
                .map_err(Error::from)
        };
        if next()?.trim() != "fairrank-checkpoint 1" {
            return Err(bad("unsupported header"));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = next()?;
            line.strip_prefix(key)
                .and_then(|v| v.strip_prefix(' '))
                .map(|v| v.trim().to_string())
                .ok_or_else(|| bad(&format!("expected {key:?}, found {line:?}")))
        };
        let kind = field("kind")?;
        let input_dim: usize = field("input_dim")?
            .parse()
            .map_err(|_| bad("input_dim is not an integer"))?;
        let mut model = match kind.as_str() {
            "linear" => {
                let bias = match field("bias")?.as_str() {
                    "true" => true,
                    "false" => false,
                    _ => return Err(bad("bias must be true or false")),
                };
                ScoringModel::Linear(LinearModel {
                    weights: vec![0.0; input_dim],
                    bias: bias.then_some(0.0),
                })
            }
            "mlp" => {
                let hidden: usize = field("hidden")?.parse().map_err(|_| bad("hidden is not an integer"))?;
                ScoringModel::Mlp(MlpModel {
                    input_dim,
                    hidden,
                    w_hidden: vec![0.0; input_dim * hidden],
                    b_hidden: vec![0.0; hidden],
                    w_out: vec![0.0; hidden],
                    b_out: 0.0,
                })
            }
            other => return Err(bad(&format!("unknown model kind {other:?}"))),
        };
        let count: usize = field("params")?.parse().map_err(|_| bad("params is not an integer"))?;
        if count != model.num_params() {
            return Err(bad("parameter count does not match the header"));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next()?;
            params.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(&format!("bad parameter {line:?}")))?,
            );
        }
        model.set_params(&params)?;
        Ok(model)
    }
}
