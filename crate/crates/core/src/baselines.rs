//! Comparison methods and brute-force oracles.
//!
//! * Post-processing: fit a least-squares relevance regressor, then for each
//!   query solve an LP over doubly stochastic document-position matrices
//!   that trades DCG on the *estimated* relevances against a slack on the
//!   group exposure constraint.
//! * Top-1: a linear scorer trained with cross-entropy on softmax top-1
//!   probabilities plus a squared penalty on the gap between the groups'
//!   mean top-1 probabilities.
//! * Exact enumeration of policy expectations and their score gradients,
//!   used as the oracle for the Monte-Carlo estimators.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Query};
use crate::error::{Error, Result};
use crate::fairness::{
    comparable_pairs, exposure_of_ranking, group_diff, group_disparity, group_ranking_term_from_exposure, group_sign,
    individual_disparity, pair_diff, MeritFunction,
};
use crate::metrics::{gain, ideal_ranking, permutations, position_biases, Ranking, UtilityMetric};
use crate::policy::{logprob_grad_scores, ranking_logprob, softmax, LinearModel, ScoringModel, ENUMERATION_LIMIT};
use crate::simplex;

const RIDGE: f64 = 1e-6;

/// Least-squares relevance predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub weights: Vec<f64>,
    pub bias: Option<f64>,
}

impl RegressionModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias.unwrap_or(0.0)
    }

    pub fn predict_query(&self, q: &Query) -> Vec<f64> {
        q.features().map(|x| self.predict(x)).collect()
    }
}

/// Solves the symmetric positive definite system `a x = b` (Cholesky).
#[allow(clippy::needless_range_loop)]
fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if d <= 0.0 {
            return Err(Error::Solver("normal equations are not positive definite".into()));
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..n {
        for k in 0..i {
            b[i] -= a[i][k] * b[k];
        }
        b[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            b[i] -= a[k][i] * b[k];
        }
        b[i] /= a[i][i];
    }
    Ok(b)
}

/// Pooled least squares of relevance on raw features, with a `1e-6` ridge.
#[allow(clippy::needless_range_loop)]
pub fn fit_linear_regression(dataset: &Dataset, with_bias: bool) -> Result<RegressionModel> {
    let d = dataset.feature_dim();
    let p = d + usize::from(with_bias);
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    let mut row = vec![0.0; p];
    for q in dataset.queries() {
        for doc in &q.docs {
            row[..d].copy_from_slice(&doc.features);
            if with_bias {
                row[d] = 1.0;
            }
            for i in 0..p {
                xty[i] += row[i] * doc.relevance;
                for j in 0..=i {
                    xtx[i][j] += row[i] * row[j];
                }
            }
        }
    }
    for i in 0..p {
        xtx[i][i] += RIDGE;
        for j in 0..i {
            xtx[j][i] = xtx[i][j];
        }
    }
    let mut w = solve_spd(xtx, xty)?;
    let bias = with_bias.then(|| w.pop().unwrap());
    Ok(RegressionModel { weights: w, bias })
}

/// `P[i][j]`: probability that document `i` is placed at position `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublyStochasticMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DoublyStochasticMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                found: data.len(),
            });
        }
        let m = Self { n, data };
        m.validate()?;
        Ok(m)
    }

    pub fn from_ranking(ranking: &Ranking) -> Self {
        let n = ranking.len();
        let mut data = vec![0.0; n * n];
        for (pos, &d) in ranking.order().iter().enumerate() {
            data[d * n + pos] = 1.0;
        }
        Self { n, data }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            n,
            data: vec![1.0 / n as f64; n * n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tol = 1e-6;
        if self.data.iter().any(|&v| !(-tol..=1.0 + tol).contains(&v)) {
            return Err(Error::InvalidParam("matrix entry outside [0, 1]".into()));
        }
        for i in 0..self.n {
            let row: f64 = self.row(i).iter().sum();
            let col: f64 = (0..self.n).map(|k| self.get(k, i)).sum();
            if (row - 1.0).abs() > tol || (col - 1.0).abs() > tol {
                return Err(Error::InvalidParam(format!("row/column {i} does not sum to 1")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, doc: usize, pos: usize) -> f64 {
        self.data[doc * self.n + pos]
    }

    pub fn row(&self, doc: usize) -> &[f64] {
        &self.data[doc * self.n..(doc + 1) * self.n]
    }

    /// `P v`: the exposure of every document.
    pub fn exposures(&self) -> Vec<f64> {
        let v = position_biases(self.n);
        (0..self.n)
            .map(|i| self.row(i).iter().zip(&v).map(|(p, v)| p * v).sum())
            .collect()
    }
}

/// 11 points evenly spaced in `[0, 0.2]`.
pub fn default_lp_lambdas() -> Vec<f64> {
    (0..=10).map(|i| 0.02 * i as f64).collect()
}

/// `{0, 1, 10, ..., 1e6}`.
pub fn default_top1_lambdas() -> Vec<f64> {
    std::iter::once(0.0).chain((0..=6).map(|e| 10f64.powi(e))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairLpSolution {
    pub matrix: DoublyStochasticMatrix,
    /// Achieved slack on the group exposure constraint.
    pub xi: f64,
    /// `u^T P v` at the optimum.
    pub utility: f64,
    /// `u^T P v - lambda * xi` at the optimum.
    pub objective: f64,
}

/// The group constraint row as coefficients on `P` (row-major), so that
/// `row . P` is the group disparity difference, or `None` when the
/// constraint is degenerate.
///
/// With `k` the group of higher mean merit (group 0 on a tie) the row is
/// `sum_{i in G_k} P_i.v / sum_{G_k} M - sum_{i in G_k'} P_i.v / sum_{G_k'} M`,
/// bounded above by the slack. This is the direction in which the disparity
/// measure penalises, so `xi = 0` is always attainable (uniform `P`).
fn fairness_row(merits: &[f64], groups: &[u8], v: &[f64]) -> Option<Vec<f64>> {
    let n = merits.len();
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    for (&m, &g) in merits.iter().zip(groups) {
        sum[usize::from(g.min(1))] += m;
        count[usize::from(g.min(1))] += 1;
    }
    if count[0] == 0 || count[1] == 0 || sum[0] <= 0.0 || sum[1] <= 0.0 {
        return None;
    }
    let high = if group_sign(merits, groups) < 0.0 { 1 } else { 0 };
    let mut row = vec![0.0; n * n];
    for (i, &g) in groups.iter().enumerate() {
        let g = usize::from(g.min(1));
        let coef = if g == high { 1.0 / sum[g] } else { -1.0 / sum[g] };
        for j in 0..n {
            row[i * n + j] = coef * v[j];
        }
    }
    Some(row)
}

/// Solves the fairness-regularised assignment LP on estimated relevances:
/// maximise `u^T P v - lambda * xi` over doubly stochastic `P` and `xi >= 0`,
/// with `u_i = 2^rel_i - 1`, `v_j = 1/log2(1+j)`, subject to the group
/// disparity of `P` on the estimated merits being at most `xi`. Merits come from the
/// estimated relevances clipped at zero. Without groups (or with only one
/// group present) the constraint is dropped.
pub fn solve_fair_lp(
    estimated: &[f64],
    groups: Option<&[u8]>,
    lambda: f64,
    merit: MeritFunction,
) -> Result<FairLpSolution> {
    let n = estimated.len();
    if n == 0 {
        return Err(Error::InvalidParam("empty candidate set".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParam(format!("lambda {lambda} must be finite and >= 0")));
    }
    if let Some(g) = groups {
        if g.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: g.len(),
            });
        }
    }
    let v = position_biases(n);
    let u: Vec<f64> = estimated.iter().map(|&r| gain(r)).collect();
    let merits = merit.merits(estimated);
    let fair = groups.and_then(|g| fairness_row(&merits, g, &v));

    let pv = n * n;
    // columns: P (n*n), xi, surplus
    let nv = pv + 2;
    let mut c = vec![0.0; nv];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = u[i] * v[j];
        }
    }
    c[pv] = -lambda;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..n {
        let mut row = vec![0.0; nv];
        row[i * n..(i + 1) * n].iter_mut().for_each(|x| *x = 1.0);
        a.push(row);
        b.push(1.0);
    }
    for j in 0..n {
        let mut row = vec![0.0; nv];
        for i in 0..n {
            row[i * n + j] = 1.0;
        }
        a.push(row);
        b.push(1.0);
    }
    if let Some(f) = &fair {
        // a.P - xi + surplus = 0
        let mut row = vec![0.0; nv];
        row[..pv].copy_from_slice(f);
        row[pv] = -1.0;
        row[pv + 1] = 1.0;
        a.push(row);
        b.push(0.0);
    }
    let sol = simplex::maximize(&c, &a, &b)?;
    let mut data = sol.x[..pv].to_vec();
    for x in &mut data {
        *x = x.clamp(0.0, 1.0);
    }
    let xi = if fair.is_some() { sol.x[pv] } else { 0.0 };
    let matrix = DoublyStochasticMatrix::new(n, data).map_err(|e| Error::Solver(format!("{e}")))?;
    let utility: f64 = (0..n)
        .map(|i| u[i] * matrix.row(i).iter().zip(&v).map(|(p, v)| p * v).sum::<f64>())
        .sum();
    Ok(FairLpSolution {
        objective: utility - lambda * xi,
        matrix,
        xi,
        utility,
    })
}

/// Expected NDCG and (when groups are given) group disparity of a
/// document-position matrix against true relevances.
pub fn evaluate_stochastic_matrix(
    p: &DoublyStochasticMatrix,
    rels: &[f64],
    groups: Option<&[u8]>,
    merit: MeritFunction,
) -> Result<(f64, Option<f64>)> {
    p.validate()?;
    if rels.len() != p.n() {
        return Err(Error::LengthMismatch {
            expected: p.n(),
            found: rels.len(),
        });
    }
    let exposure = p.exposures();
    let dcg: f64 = rels.iter().zip(&exposure).map(|(&r, e)| gain(r) * e).sum();
    let ideal = DoublyStochasticMatrix::from_ranking(&ideal_ranking(rels));
    let ideal_dcg: f64 = rels.iter().zip(ideal.exposures()).map(|(&r, e)| gain(r) * e).sum();
    let ndcg = if ideal_dcg > 0.0 { dcg / ideal_dcg } else { 0.0 };
    let disparity = groups.map(|g| group_disparity(&exposure, &merit.merits(rels), g));
    Ok((ndcg, disparity))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top1Result {
    pub model: ScoringModel,
    /// Mean training loss before training and after each epoch.
    pub losses: Vec<f64>,
}

fn top1_target(rels: &[f64]) -> Vec<f64> {
    let total: f64 = rels.iter().map(|r| r.max(0.0)).sum();
    if total > 0.0 {
        rels.iter().map(|r| r.max(0.0) / total).collect()
    } else {
        vec![1.0 / rels.len() as f64; rels.len()]
    }
}

/// Per-group averaging weights `+1/|G0|`, `-1/|G1|`, or `None` if a group
/// is missing.
fn group_contrast(groups: &[u8]) -> Option<Vec<f64>> {
    let c0 = groups.iter().filter(|&&g| g == 0).count();
    let c1 = groups.len() - c0;
    if c0 == 0 || c1 == 0 {
        return None;
    }
    Some(
        groups
            .iter()
            .map(|&g| if g == 0 { 1.0 / c0 as f64 } else { -1.0 / c1 as f64 })
            .collect(),
    )
}

/// Loss and its score gradient for one query.
fn top1_loss(scores: &[f64], rels: &[f64], groups: &[u8], lambda: f64) -> (f64, Vec<f64>) {
    let p = softmax(scores);
    let t = top1_target(rels);
    let ce: f64 = -t
        .iter()
        .zip(&p)
        .map(|(t, p)| if *t > 0.0 { t * p.max(1e-300).ln() } else { 0.0 })
        .sum::<f64>();
    let mut grad: Vec<f64> = p.iter().zip(&t).map(|(p, t)| p - t).collect();
    let mut loss = ce;
    if let Some(a) = group_contrast(groups) {
        let gap: f64 = a.iter().zip(&p).map(|(a, p)| a * p).sum();
        loss += lambda * gap * gap;
        let pa: f64 = p.iter().zip(&a).map(|(p, a)| p * a).sum();
        for ((g, p), a) in grad.iter_mut().zip(&p).zip(&a) {
            *g += 2.0 * lambda * gap * p * (a - pa);
        }
    }
    (loss, grad)
}

fn top1_mean_loss(model: &ScoringModel, dataset: &Dataset, lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for q in dataset.queries() {
        let groups = q.groups().ok_or(Error::MissingGroups)?;
        total += top1_loss(&model.score(q)?, &q.relevances(), &groups, lambda).0;
    }
    Ok(total / dataset.queries().len() as f64)
}

/// Trains the top-1 softmax baseline with per-query SGD from zero weights.
pub fn train_top1_baseline(
    dataset: &Dataset,
    lambda: f64,
    learning_rate: f64,
    epochs: usize,
    seed: u64,
) -> Result<Top1Result> {
    if !dataset.has_groups() {
        return Err(Error::MissingGroups);
    }
    if !(lambda >= 0.0 && learning_rate >= 0.0) {
        return Err(Error::InvalidParam("lambda and learning rate must be >= 0".into()));
    }
    let mut model = ScoringModel::Linear(LinearModel {
        weights: vec![0.0; dataset.feature_dim()],
        bias: None,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.queries().len()).collect();
    let mut losses = vec![top1_mean_loss(&model, dataset, lambda)?];
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &qi in &order {
            let q = &dataset.queries()[qi];
            let groups = q.groups().ok_or(Error::MissingGroups)?;
            let (_, gs) = top1_loss(&model.score(q)?, &q.relevances(), &groups, lambda);
            let grad = model.backprop(q, &gs)?;
            let mut params = model.params();
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= learning_rate * g;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite { qid: q.qid.clone() });
            }
            model.set_params(&params)?;
        }
        losses.push(top1_mean_loss(&model, dataset, lambda)?);
    }
    Ok(Top1Result { model, losses })
}

/// Exact policy expectations and their score gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyExpectations {
    pub utility: f64,
    pub exposures: Vec<f64>,
    pub individual: f64,
    pub group: Option<f64>,
    pub grad_utility: Vec<f64>,
    pub grad_individual: Vec<f64>,
    pub grad_group: Option<Vec<f64>>,
}

/// Sums over all `n!` rankings of `pi(r) * quantity`, with gradients from
/// `sum_r pi(r) grad log pi(r) quantity(r)`. Hinge indicators use the exact
/// exposures. Limited to `n <= 7`.
pub fn enumerate_policy_expectations(
    scores: &[f64],
    rels: &[f64],
    merits: &[f64],
    groups: Option<&[u8]>,
    metric: UtilityMetric,
) -> Result<PolicyExpectations> {
    let n = scores.len();
    if n > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: ENUMERATION_LIMIT,
        });
    }
    if rels.len() != n || merits.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: rels.len().min(merits.len()),
        });
    }
    struct Term {
        prob: f64,
        grad: Vec<f64>,
        exposure: Vec<f64>,
    }
    let mut terms = Vec::new();
    let mut utility = 0.0;
    let mut grad_utility = vec![0.0; n];
    let mut exposures = vec![0.0; n];
    for r in permutations(n) {
        let prob = ranking_logprob(scores, &r)?.exp();
        let grad = logprob_grad_scores(scores, &r)?;
        let value = metric.reward(&r, rels)?;
        utility += prob * value;
        for (g, l) in grad_utility.iter_mut().zip(&grad) {
            *g += prob * value * l;
        }
        let exposure = exposure_of_ranking(&r);
        for (e, x) in exposures.iter_mut().zip(&exposure) {
            *e += prob * x;
        }
        terms.push(Term { prob, grad, exposure });
    }

    let accumulate = |weight: &dyn Fn(&[f64]) -> f64| {
        let mut out = vec![0.0; n];
        for t in &terms {
            let w = t.prob * weight(&t.exposure);
            for (o, g) in out.iter_mut().zip(&t.grad) {
                *o += w * g;
            }
        }
        out
    };

    let pairs = comparable_pairs(merits);
    let individual = individual_disparity(&exposures, merits);
    let active: Vec<(usize, usize)> = pairs
        .iter()
        .copied()
        .filter(|&(i, j)| pair_diff(&exposures, merits, i, j) > 0.0)
        .collect();
    let grad_individual = if active.is_empty() {
        vec![0.0; n]
    } else {
        let h = pairs.len() as f64;
        accumulate(&|e| active.iter().map(|&(i, j)| pair_diff(e, merits, i, j)).sum::<f64>() / h)
    };

    let (group, grad_group) = match groups {
        None => (None, None),
        Some(g) => {
            let value = group_disparity(&exposures, merits, g);
            let sign = group_sign(merits, g);
            let on = matches!(group_diff(&exposures, merits, g), Some(d) if sign * d > 0.0);
            let grad = if on {
                accumulate(&|e| sign * group_ranking_term_from_exposure(e, merits, g).unwrap_or(0.0))
            } else {
                vec![0.0; n]
            };
            (Some(value), Some(grad))
        }
    };

    Ok(PolicyExpectations {
        utility,
        exposures,
        individual,
        group,
        grad_utility,
        grad_individual,
        grad_group,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Document;
    use crate::metrics::ndcg;
    use crate::policy::argmax_ranking;

    fn dataset(rows: &[(&[f64], f64)]) -> Dataset {
        Dataset::new(vec![Query {
            qid: "1".into(),
            docs: rows
                .iter()
                .map(|(x, r)| Document {
                    features: x.to_vec(),
                    relevance: *r,
                    group: Some(0),
                })
                .collect(),
        }])
        .unwrap()
    }

    #[test]
    fn regression_recovers_linear_relation() {
        let rows: Vec<(Vec<f64>, f64)> = (0..20)
            .map(|i| {
                let x1 = i as f64 * 0.3;
                let x2 = ((i * 7) % 5) as f64;
                (vec![x1, x2], 2.0 * x1)
            })
            .collect();
        let refs: Vec<(&[f64], f64)> = rows.iter().map(|(x, r)| (x.as_slice(), *r)).collect();
        let m = fit_linear_regression(&dataset(&refs), false).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-4 && m.weights[1].abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn regression_constant_target_with_bias() {
        let m = fit_linear_regression(&dataset(&[(&[1.0], 3.0), (&[2.0], 3.0), (&[5.0], 3.0)]), true).unwrap();
        assert!((m.bias.unwrap() - 3.0).abs() < 1e-4);
        assert!(m.weights[0].abs() < 1e-4);
        let m = fit_linear_regression(&dataset(&[(&[3.0], 6.0)]), false).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn lp_without_penalty_sorts() {
        let est = [0.4, 2.5, 1.1, 3.0, -0.2];
        let groups = [0, 1, 0, 0, 1];
        let sol = solve_fair_lp(&est, Some(&groups), 0.0, MeritFunction::Identity).unwrap();
        let want = DoublyStochasticMatrix::from_ranking(&argmax_ranking(&est));
        for (a, b) in sol.matrix.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-9);
        }
        let one = solve_fair_lp(&[1.0], Some(&[0]), 0.5, MeritFunction::Identity).unwrap();
        assert_eq!(one.matrix.data, vec![1.0]);
        assert_eq!(one.xi, 0.0);
    }

    #[test]
    fn matrix_evaluation() {
        let rels = [1.0, 3.0, 0.0];
        let p = DoublyStochasticMatrix::from_ranking(&ideal_ranking(&rels));
        assert_eq!(
            evaluate_stochastic_matrix(&p, &rels, None, MeritFunction::Identity)
                .unwrap()
                .0,
            1.0
        );
        let rk = Ranking::new(vec![2, 0, 1]).unwrap();
        let p = DoublyStochasticMatrix::from_ranking(&rk);
        let (v, _) = evaluate_stochastic_matrix(&p, &rels, None, MeritFunction::Identity).unwrap();
        assert!((v - ndcg(&rk, &rels, None).unwrap()).abs() < 1e-15);
        let u = DoublyStochasticMatrix::uniform(2);
        let e = u.exposures();
        assert!((e[0] - 0.81546).abs() < 5e-6 && e[0] == e[1]);
        let (_, d) = evaluate_stochastic_matrix(&u, &[2.0, 1.0], Some(&[0, 1]), MeritFunction::Identity).unwrap();
        // higher-merit group 0 gets less exposure per merit: no violation
        assert_eq!(d, Some(0.0));
        assert!(DoublyStochasticMatrix::new(2, vec![1.0, 0.0, 1.0, 0.0]).is_err());
    }

    /// `u^T P v - lambda * max(0, disparity)` evaluated directly on a matrix.
    fn lp_value(p: &DoublyStochasticMatrix, est: &[f64], groups: &[u8], lambda: f64) -> (f64, f64) {
        let e = p.exposures();
        let util: f64 = est.iter().zip(&e).map(|(&r, e)| gain(r) * e).sum();
        let xi = group_disparity(&e, &MeritFunction::Identity.merits(est), groups);
        (util - lambda * xi, xi)
    }

    fn mix(a: &DoublyStochasticMatrix, b: &DoublyStochasticMatrix, t: f64) -> DoublyStochasticMatrix {
        let data = a.data.iter().zip(&b.data).map(|(x, y)| (1.0 - t) * x + t * y).collect();
        DoublyStochasticMatrix { n: a.n, data }
    }

    #[test]
    fn lp_matches_vertex_mixture_oracle() {
        let groups = [0u8, 1, 0];
        for (est, lambda) in [([2.0, 1.5, 0.5], 1e4), ([1.0, 2.0, 0.3], 1e4), ([2.0, 1.5, 0.5], 3.0)] {
            let sol = solve_fair_lp(&est, Some(&groups), lambda, MeritFunction::Identity).unwrap();
            let vertices: Vec<DoublyStochasticMatrix> = permutations(3)
                .iter()
                .map(DoublyStochasticMatrix::from_ranking)
                .collect();
            let merits = MeritFunction::Identity.merits(&est);
            let diff = |p: &DoublyStochasticMatrix| group_diff(&p.exposures(), &merits, &groups).unwrap();
            // every vertex, plus each pairwise mixture where the disparity
            // difference crosses zero
            let mut candidates = vertices.clone();
            for a in &vertices {
                for b in &vertices {
                    let (da, db) = (diff(a), diff(b));
                    if da > 0.0 && db < 0.0 {
                        candidates.push(mix(a, b, da / (da - db)));
                    }
                }
            }
            let best = candidates
                .iter()
                .map(|p| lp_value(p, &est, &groups, lambda).0)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((sol.objective - best).abs() < 1e-6, "{} vs {best}", sol.objective);
            if lambda > 100.0 {
                for p in &candidates {
                    assert!(sol.xi <= lp_value(p, &est, &groups, lambda).1 + 1e-9);
                }
            }
            let (value, xi) = lp_value(&sol.matrix, &est, &groups, lambda);
            assert!((value - sol.objective).abs() < 1e-9 && (xi - sol.xi).abs() < 1e-9);
        }
    }

    #[test]
    fn default_grids() {
        let lp = default_lp_lambdas();
        assert_eq!(lp.len(), 11);
        assert!((lp[10] - 0.2).abs() < 1e-15);
        assert_eq!(default_top1_lambdas(), vec![0.0, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6]);
    }

    proptest::proptest! {
        #[test]
        fn lp_trades_utility_for_slack(
            est in proptest::collection::vec(0.0f64..4.0, 4),
            groups in proptest::collection::vec(0u8..2, 4),
        ) {
            let mut prev: Option<FairLpSolution> = None;
            for lambda in [0.0, 0.5, 2.0, 10.0, 100.0] {
                let sol = solve_fair_lp(&est, Some(&groups), lambda, MeritFunction::Identity).unwrap();
                if let Some(p) = &prev {
                    proptest::prop_assert!(sol.utility <= p.utility + 1e-9);
                    proptest::prop_assert!(sol.xi <= p.xi + 1e-9);
                }
                prev = Some(sol);
            }
        }
    }

    fn groups_dataset() -> Dataset {
        let mut queries = Vec::new();
        for qi in 0..6 {
            let docs = (0..4)
                .map(|d| {
                    let x = (qi * 4 + d) as f64 * 0.37 % 2.0;
                    Document {
                        features: vec![x, 1.0 - x],
                        relevance: if d == qi % 4 { 1.0 } else { 0.0 },
                        group: Some((d % 2) as u8),
                    }
                })
                .collect();
            queries.push(Query {
                qid: qi.to_string(),
                docs,
            });
        }
        Dataset::new(queries).unwrap()
    }

    #[test]
    fn top1_zero_learning_rate_and_uniform_target() {
        let ds = groups_dataset();
        let r = train_top1_baseline(&ds, 1.0, 0.0, 3, 0).unwrap();
        assert_eq!(r.model.params(), vec![0.0, 0.0]);
        // all-equal relevances: uniform target equals the zero-weight softmax
        let flat = Dataset::new(
            ds.queries()
                .iter()
                .map(|q| Query {
                    qid: q.qid.clone(),
                    docs: q
                        .docs
                        .iter()
                        .map(|d| Document {
                            relevance: 1.0,
                            group: Some(0),
                            ..d.clone()
                        })
                        .collect(),
                })
                .collect(),
        )
        .unwrap();
        let q = &flat.queries()[0];
        let (_, g) = top1_loss(&[0.0; 4], &q.relevances(), &[0, 0, 0, 0], 0.0);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        assert!(train_top1_baseline(&flat.without_groups(), 0.0, 0.1, 1, 0).is_err());
    }

    #[test]
    fn top1_loss_gradient_matches_finite_differences() {
        let s = [0.3, -0.2, 1.0, 0.1];
        let rels = [1.0, 0.0, 2.0, 0.5];
        let groups = [0, 1, 1, 0];
        let (_, g) = top1_loss(&s, &rels, &groups, 3.0);
        for d in 0..4 {
            let mut up = s;
            let mut dn = s;
            up[d] += 1e-6;
            dn[d] -= 1e-6;
            let fd = (top1_loss(&up, &rels, &groups, 3.0).0 - top1_loss(&dn, &rels, &groups, 3.0).0) / 2e-6;
            assert!((fd - g[d]).abs() < 1e-6);
        }
    }

    #[test]
    fn enumeration_values() {
        let e = enumerate_policy_expectations(
            &[0.0, 0.0],
            &[1.0, 0.0],
            &[1.0, 0.0],
            None,
            UtilityMetric::Ndcg { k: None },
        )
        .unwrap();
        assert!((e.utility - 0.81546).abs() < 5e-6);
        let s = [50.0, 0.0, -50.0];
        let rels = [0.0, 2.0, 1.0];
        let e = enumerate_policy_expectations(&s, &rels, &rels, None, UtilityMetric::Dcg).unwrap();
        let top = argmax_ranking(&s);
        assert!((e.utility - crate::metrics::dcg(&top, &rels).unwrap()).abs() < 1e-9);
        assert!(enumerate_policy_expectations(&[0.0; 8], &[0.0; 8], &[0.0; 8], None, UtilityMetric::Dcg).is_err());
    }

    #[test]
    fn enumeration_gradients_match_finite_differences() {
        let s = vec![0.4, -0.3, 0.9, 0.0];
        let rels = [2.0, 1.0, 0.5, 1.5];
        let merits = MeritFunction::Identity.merits(&rels);
        let groups = [0u8, 0, 1, 1];
        let eval = |s: &[f64]| {
            enumerate_policy_expectations(s, &rels, &merits, Some(&groups), UtilityMetric::Ndcg { k: None }).unwrap()
        };
        let base = eval(&s);
        let h = 1e-5;
        for d in 0..4 {
            let mut up = s.clone();
            let mut dn = s.clone();
            up[d] += h;
            dn[d] -= h;
            let (a, b) = (eval(&up), eval(&dn));
            let checks = [
                ((a.utility - b.utility) / (2.0 * h), base.grad_utility[d]),
                ((a.individual - b.individual) / (2.0 * h), base.grad_individual[d]),
                (
                    (a.group.unwrap() - b.group.unwrap()) / (2.0 * h),
                    base.grad_group.as_ref().unwrap()[d],
                ),
            ];
            for (fd, an) in checks {
                let scale = fd.abs().max(an.abs()).max(1e-8);
                assert!((fd - an).abs() / scale < 1e-6, "doc {d}: fd {fd} analytic {an}");
            }
        }
    }
}
