//! Policy-gradient training of fair ranking policies.
//!
//! Each step draws one query, samples `S` rankings from the current
//! Plackett-Luce policy, and ascends
//! `grad U - lambda * grad D + gamma * grad H`, where every term is a
//! score-function estimate built from the same sample. Gradients are formed
//! in score space and pushed through the scoring model once per step.
//!
//! The disparity hinge indicators are evaluated on exposures estimated from
//! that same sample, so the disparity gradient carries an `O(1/S)` bias.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Query};
use crate::error::{Error, Result};
use crate::fairness::{
    comparable_pairs, exposure_of_ranking, group_diff, group_ranking_term_from_exposure, group_sign, pair_diff,
    DisparityConfig, DisparityKind, MeritFunction,
};
use crate::metrics::{err, ndcg, Ranking, UtilityMetric};
use crate::policy::{
    argmax_ranking, logprob_grad_scores, policy_expectation, sample_ranking, softmax_entropy, Estimation, ModelSpec,
    PlackettLuce, ScoringModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for gradient *ascent* on a flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, num_params: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p += lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub samples: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub metric: UtilityMetric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disparity: Option<DisparityConfig>,
    pub seed: u64,
    pub use_baseline: bool,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    /// Monte-Carlo sample size for evaluating disparity when `n > 7`.
    pub eval_samples: usize,
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            gamma: 1.0,
            samples: 10,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            epochs: 20,
            metric: UtilityMetric::Ndcg { k: Some(10) },
            disparity: None,
            seed: 0,
            use_baseline: true,
            patience: Some(5),
            eval_samples: 32,
            model: ModelSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be finite and >= 0", self.gamma));
        }
        if self.samples == 0 || self.epochs == 0 || self.eval_samples == 0 {
            return bad("samples, epochs and eval_samples must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.learning_rate));
        }
        Ok(())
    }
}

pub fn sample_rankings<R: Rng + ?Sized>(scores: &[f64], samples: usize, rng: &mut R) -> Vec<Ranking> {
    (0..samples).map(|_| sample_ranking(scores, rng)).collect()
}

/// `(1/S) sum_s weight_s * grad log pi(r_s)` in score space.
fn weighted_logprob_grad(scores: &[f64], rankings: &[Ranking], weights: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; scores.len()];
    let s = rankings.len() as f64;
    for (r, &w) in rankings.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, g) in out.iter_mut().zip(logprob_grad_scores(scores, r)?) {
            *o += w * g / s;
        }
    }
    Ok(out)
}

fn mean_exposure(n: usize, rankings: &[Ranking]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for r in rankings {
        for (o, e) in out.iter_mut().zip(exposure_of_ranking(r)) {
            *o += e;
        }
    }
    for o in &mut out {
        *o /= rankings.len() as f64;
    }
    out
}

/// Score-space REINFORCE estimate of the utility gradient. With the
/// baseline on, each reward has the mean reward of the other samples
/// subtracted.
pub fn utility_score_gradient(
    scores: &[f64],
    rels: &[f64],
    metric: UtilityMetric,
    rankings: &[Ranking],
    use_baseline: bool,
) -> Result<Vec<f64>> {
    let rewards = rankings
        .iter()
        .map(|r| metric.reward(r, rels))
        .collect::<Result<Vec<f64>>>()?;
    // sample s is left out of its own baseline, which keeps the estimator
    // unbiased for any S
    let total: f64 = rewards.iter().sum();
    let s = rewards.len();
    let weights: Vec<f64> = rewards
        .iter()
        .map(|r| match (use_baseline, s) {
            (true, 2..) => r - (total - r) / (s - 1) as f64,
            _ => *r,
        })
        .collect();
    weighted_logprob_grad(scores, rankings, &weights)
}

/// Score-space estimate of the individual-disparity gradient. Pairs enter
/// when their pair difference, computed on sample-mean exposures, is
/// positive.
pub fn individual_score_gradient(scores: &[f64], merits: &[f64], rankings: &[Ranking]) -> Result<Vec<f64>> {
    let n = scores.len();
    let pairs = comparable_pairs(merits);
    if pairs.is_empty() {
        return Ok(vec![0.0; n]);
    }
    let exposure = mean_exposure(n, rankings);
    // per-ranking weight is sum over active pairs of v_r(i)/M_i - v_r(j)/M_j,
    // i.e. a fixed linear functional of the ranking's exposure
    let mut coef = vec![0.0; n];
    for &(i, j) in &pairs {
        if pair_diff(&exposure, merits, i, j) > 0.0 {
            coef[i] += 1.0 / merits[i];
            coef[j] -= 1.0 / merits[j];
        }
    }
    let h = pairs.len() as f64;
    let weights: Vec<f64> = rankings
        .iter()
        .map(|r| {
            exposure_of_ranking(r)
                .iter()
                .zip(&coef)
                .map(|(e, c)| e * c)
                .sum::<f64>()
                / h
        })
        .collect();
    weighted_logprob_grad(scores, rankings, &weights)
}

/// Score-space estimate of the group-disparity gradient; zero unless the
/// higher-merit group is over-exposed on the sample-mean exposures.
pub fn group_score_gradient(scores: &[f64], merits: &[f64], groups: &[u8], rankings: &[Ranking]) -> Result<Vec<f64>> {
    let n = scores.len();
    let sign = group_sign(merits, groups);
    let zero = Ok(vec![0.0; n]);
    if sign == 0.0 {
        return zero;
    }
    let exposure = mean_exposure(n, rankings);
    match group_diff(&exposure, merits, groups) {
        Some(diff) if sign * diff > 0.0 => {}
        _ => return zero,
    }
    let weights: Vec<f64> = rankings
        .iter()
        .map(|r| sign * group_ranking_term_from_exposure(&exposure_of_ranking(r), merits, groups).unwrap_or(0.0))
        .collect();
    weighted_logprob_grad(scores, rankings, &weights)
}

/// Monte-Carlo estimate of `grad_theta U` for one query.
pub fn utility_gradient<R: Rng + ?Sized>(
    model: &ScoringModel,
    query: &Query,
    metric: UtilityMetric,
    samples: usize,
    rng: &mut R,
    use_baseline: bool,
) -> Result<Vec<f64>> {
    let scores = model.score(query)?;
    let rankings = sample_rankings(&scores, samples, rng);
    let g = utility_score_gradient(&scores, &query.relevances(), metric, &rankings, use_baseline)?;
    model.backprop(query, &g)
}

/// Monte-Carlo estimate of `grad_theta D_ind` for one query.
pub fn individual_disparity_gradient<R: Rng + ?Sized>(
    model: &ScoringModel,
    query: &Query,
    merit: MeritFunction,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let scores = model.score(query)?;
    let rankings = sample_rankings(&scores, samples, rng);
    let g = individual_score_gradient(&scores, &merit.merits(&query.relevances()), &rankings)?;
    model.backprop(query, &g)
}

/// Monte-Carlo estimate of `grad_theta D_grp` for one query.
pub fn group_disparity_gradient<R: Rng + ?Sized>(
    model: &ScoringModel,
    query: &Query,
    merit: MeritFunction,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let groups = query.groups().ok_or(Error::MissingGroups)?;
    let scores = model.score(query)?;
    let rankings = sample_rankings(&scores, samples, rng);
    let g = group_score_gradient(&scores, &merit.merits(&query.relevances()), &groups, &rankings)?;
    model.backprop(query, &g)
}

/// Full ascent direction for one query in score space.
fn objective_score_gradient<R: Rng + ?Sized>(
    scores: &[f64],
    query: &Query,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let rels = query.relevances();
    let rankings = sample_rankings(scores, config.samples, rng);
    let mut g = utility_score_gradient(scores, &rels, config.metric, &rankings, config.use_baseline)?;
    if let Some(d) = config.disparity.filter(|_| config.lambda > 0.0) {
        let merits = d.merit.merits(&rels);
        let gd = match d.kind {
            DisparityKind::Individual => individual_score_gradient(scores, &merits, &rankings)?,
            DisparityKind::Group => {
                let groups = query.groups().ok_or(Error::MissingGroups)?;
                group_score_gradient(scores, &merits, &groups, &rankings)?
            }
        };
        for (a, b) in g.iter_mut().zip(gd) {
            *a -= config.lambda * b;
        }
    }
    if config.gamma > 0.0 {
        let (_, gh) = softmax_entropy(scores);
        for (a, b) in g.iter_mut().zip(gh) {
            *a += config.gamma * b;
        }
    }
    Ok(g)
}

/// One optimizer step on one query.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut ScoringModel,
    state: &mut OptimizerState,
    query: &Query,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<()> {
    let scores = model.score(query)?;
    let g = objective_score_gradient(&scores, query, config, rng)?;
    let grad = model.backprop(query, &g)?;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { qid: query.qid.clone() });
    }
    let mut params = model.params();
    state.step(&mut params, &grad, config.learning_rate);
    model.set_params(&params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub qid: String,
    /// Training reward averaged over the stochastic policy.
    pub expected_reward: f64,
    pub utility: f64,
    pub ndcg: f64,
    pub err: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disparity: Option<f64>,
}

/// Dataset means of the per-query evaluation values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub expected_reward: f64,
    pub utility: f64,
    pub ndcg: f64,
    pub err: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disparity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub metrics: EvalMetrics,
    pub per_query: Vec<QueryEval>,
}

/// Cutoff used for the reported NDCG column.
pub fn report_cutoff(metric: UtilityMetric) -> Option<usize> {
    match metric {
        UtilityMetric::Ndcg { k } => k,
        _ => Some(10),
    }
}

/// Grade used for the reported ERR column: at least 4, raised to cover the
/// largest relevance in the dataset.
pub fn report_max_grade(dataset: &Dataset) -> f64 {
    dataset
        .queries()
        .iter()
        .flat_map(|q| q.docs.iter().map(|d| d.relevance))
        .fold(4.0, f64::max)
        .ceil()
}

/// Evaluates a model: utility, NDCG and ERR on the argmax ranking; expected
/// reward and disparity on the stochastic policy (exact for `n <= 7`,
/// otherwise Monte-Carlo with `eval_samples` rankings).
pub fn evaluate(
    model: &ScoringModel,
    dataset: &Dataset,
    metric: UtilityMetric,
    disparity: Option<DisparityConfig>,
    eval_samples: usize,
    seed: u64,
) -> Result<EvalSummary> {
    if eval_samples == 0 {
        return Err(Error::InvalidParam("eval_samples must be positive".into()));
    }
    if matches!(disparity, Some(d) if d.kind == DisparityKind::Group) && !dataset.has_groups() {
        return Err(Error::MissingGroups);
    }
    let k = report_cutoff(metric);
    let grade = report_max_grade(dataset);
    let mut per_query = Vec::with_capacity(dataset.queries().len());
    for (qi, q) in dataset.queries().iter().enumerate() {
        let scores = model.score(q)?;
        let rels = q.relevances();
        let n = q.len();
        let top = argmax_ranking(&scores);
        let est = Estimation::Auto {
            samples: eval_samples,
            seed: seed.wrapping_add(qi as u64),
        };
        // exposures followed by the reward
        let moments = policy_expectation(&PlackettLuce::new(scores), est, n + 1, |r| {
            let mut out = exposure_of_ranking(r);
            out.push(metric.reward(r, &rels)?);
            Ok(out)
        })?;
        let disparity = match disparity {
            Some(d) => Some(d.measure(&moments[..n], &rels, q.groups().as_deref())?),
            None => None,
        };
        per_query.push(QueryEval {
            qid: q.qid.clone(),
            expected_reward: moments[n],
            utility: metric.value(&top, &rels).or_else(|e| match metric {
                UtilityMetric::AvgRank => Ok(0.0),
                _ => Err(e),
            })?,
            ndcg: ndcg(&top, &rels, k)?,
            err: err(&top, &rels, grade)?,
            disparity,
        });
    }
    let n = per_query.len() as f64;
    let mean = |f: &dyn Fn(&QueryEval) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    let metrics = EvalMetrics {
        expected_reward: mean(&|q| q.expected_reward),
        utility: mean(&|q| q.utility),
        ndcg: mean(&|q| q.ndcg),
        err: mean(&|q| q.err),
        disparity: disparity.map(|_| mean(&|q| q.disparity.unwrap_or(0.0))),
    };
    Ok(EvalSummary { metrics, per_query })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_ndcg: f64,
    pub train_disparity: Option<f64>,
    pub validation_ndcg: f64,
    pub validation_disparity: Option<f64>,
    pub validation_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub model: ScoringModel,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub train: EvalMetrics,
    pub validation: EvalMetrics,
    /// Mean training-set disparity of the selected policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_lambda: Option<f64>,
}

fn check_compat(dataset: &Dataset, config: &TrainConfig, model: &ScoringModel) -> Result<()> {
    if dataset.feature_dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: dataset.feature_dim(),
        });
    }
    if matches!(config.disparity, Some(d) if d.kind == DisparityKind::Group) && !dataset.has_groups() {
        return Err(Error::MissingGroups);
    }
    Ok(())
}

/// Trains a freshly initialised model (see [`TrainConfig::model`]).
pub fn train(train_set: &Dataset, validation: Option<&Dataset>, config: &TrainConfig) -> Result<RunRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = config.model.init(train_set.feature_dim(), &mut rng);
    train_model(model, train_set, validation, config, &mut rng)
}

/// Trains starting from `model`. Without a validation set the training set
/// drives model selection.
pub fn train_model(
    mut model: ScoringModel,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RunRecord> {
    config.validate()?;
    let validation = validation.unwrap_or(train_set);
    check_compat(train_set, config, &model)?;
    check_compat(validation, config, &model)?;

    let mut state = OptimizerState::new(config.optimizer, model.num_params());
    let mut order: Vec<usize> = (0..train_set.queries().len()).collect();
    let eval_seed = config.seed ^ 0x5eed_e7a1;
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ScoringModel)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        for &qi in &order {
            train_step(&mut model, &mut state, &train_set.queries()[qi], config, rng)?;
        }
        let tr = evaluate(
            &model,
            train_set,
            config.metric,
            config.disparity,
            config.eval_samples,
            eval_seed,
        )?;
        let va = evaluate(
            &model,
            validation,
            config.metric,
            config.disparity,
            config.eval_samples,
            eval_seed,
        )?;
        let objective = va.metrics.expected_reward - config.lambda * va.metrics.disparity.unwrap_or(0.0);
        epochs.push(EpochRecord {
            epoch,
            train_ndcg: tr.metrics.ndcg,
            train_disparity: tr.metrics.disparity,
            validation_ndcg: va.metrics.ndcg,
            validation_disparity: va.metrics.disparity,
            validation_objective: objective,
        });
        if best.as_ref().is_none_or(|(b, _, _)| objective > *b) {
            best = Some((objective, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    let (_, best_epoch, model) = best.expect("at least one epoch runs");
    let train_eval = evaluate(
        &model,
        train_set,
        config.metric,
        config.disparity,
        config.eval_samples,
        eval_seed,
    )?;
    let val_eval = evaluate(
        &model,
        validation,
        config.metric,
        config.disparity,
        config.eval_samples,
        eval_seed,
    )?;
    Ok(RunRecord {
        config: config.clone(),
        delta_lambda: train_eval.metrics.disparity,
        model,
        epochs,
        best_epoch,
        train: train_eval.metrics,
        validation: val_eval.metrics,
    })
}
