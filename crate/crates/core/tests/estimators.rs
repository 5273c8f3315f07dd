mod common;

use common::{max_z, mean_and_se, query, random_query};
use fairrank::baselines::enumerate_policy_expectations;
use fairrank::fairness::{group_diff, group_sign, MeritFunction};
use fairrank::metrics::{permutations, UtilityMetric};
use fairrank::policy::{ranking_logprob, sample_ranking, PlackettLuce, RankingPolicy, ScoringModel};
use fairrank::trainer::{group_disparity_gradient, individual_disparity_gradient, utility_gradient};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NDCG: UtilityMetric = UtilityMetric::Ndcg { k: None };

fn random_model(rng: &mut ChaCha8Rng, dim: usize) -> ScoringModel {
    ScoringModel::linear((0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect())
}

#[test]
fn utility_estimator_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let q = random_query(3, 2, &mut rng);
        let model = random_model(&mut rng, 2);
        let scores = model.score(&q).unwrap();
        let rels = q.relevances();
        let exact = enumerate_policy_expectations(&scores, &rels, &rels, None, NDCG).unwrap();
        let exact = model.backprop(&q, &exact.grad_utility).unwrap();
        for baseline in [false, true] {
            // 2000 estimates of 10 rankings each
            let draws: Vec<Vec<f64>> = (0..2000)
                .map(|_| utility_gradient(&model, &q, NDCG, 10, &mut rng, baseline).unwrap())
                .collect();
            let (mean, se) = mean_and_se(&draws);
            assert!(max_z(&mean, &se, &exact) < 3.0, "{mean:?} {se:?} {exact:?}");
        }
    }
}

#[test]
fn baseline_does_not_change_expected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let q = random_query(3, 2, &mut rng);
    let model = random_model(&mut rng, 2);
    let mut run = |baseline| {
        let draws: Vec<Vec<f64>> = (0..5000)
            .map(|_| utility_gradient(&model, &q, NDCG, 10, &mut rng, baseline).unwrap())
            .collect();
        mean_and_se(&draws)
    };
    let (m0, s0) = run(false);
    let (m1, s1) = run(true);
    for k in 0..m0.len() {
        let se = (s0[k].powi(2) + s1[k].powi(2)).sqrt();
        assert!(
            (m0[k] - m1[k]).abs() < 4.0 * se,
            "component {k}: {} vs {}",
            m0[k],
            m1[k]
        );
        // the baseline is there to cut variance
        assert!(s1[k] < s0[k]);
    }
}

#[test]
fn individual_estimator_matches_active_pairs() {
    // doc 1 has barely more merit than doc 0 but far more exposure, so that
    // pair is violated by a wide margin and the sampled indicators agree
    // with the exact ones
    let q = query(&[vec![-1.0], vec![1.0], vec![0.0]], &[1.0, 1.1, 3.0], None);
    let model = ScoringModel::linear(vec![1.2]);
    let scores = model.score(&q).unwrap();
    let merits = q.relevances();
    let exact = enumerate_policy_expectations(&scores, &merits, &merits, None, NDCG).unwrap();
    assert!(exact.individual > 0.05, "{}", exact.individual);
    let exact = model.backprop(&q, &exact.grad_individual).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let draws: Vec<Vec<f64>> = (0..800)
        .map(|_| individual_disparity_gradient(&model, &q, MeritFunction::Identity, 25, &mut rng).unwrap())
        .collect();
    let (mean, se) = mean_and_se(&draws);
    assert!(max_z(&mean, &se, &exact) < 3.0, "{mean:?} {se:?} {exact:?}");
}

#[test]
fn group_estimator_matches_enumeration() {
    // group 0 has the higher merit and the higher scores
    let feats = vec![vec![1.0, 0.2], vec![0.8, -0.4], vec![-0.5, 0.1], vec![-1.0, 0.3]];
    let rels = [1.6, 1.4, 1.2, 1.3];
    let groups = [0u8, 0, 1, 1];
    let q = query(&feats, &rels, Some(&groups));
    let model = ScoringModel::linear(vec![1.5, -0.5]);
    let scores = model.score(&q).unwrap();
    let exact = enumerate_policy_expectations(&scores, &rels, &rels, Some(&groups), NDCG).unwrap();
    let diff = group_diff(&exact.exposures, &rels, &groups).unwrap();
    assert!(group_sign(&rels, &groups) * diff > 0.05, "{diff}");
    let exact = model.backprop(&q, exact.grad_group.as_ref().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let draws: Vec<Vec<f64>> = (0..800)
        .map(|_| group_disparity_gradient(&model, &q, MeritFunction::Identity, 25, &mut rng).unwrap())
        .collect();
    assert!(
        draws.iter().all(|d| d.iter().any(|v| *v != 0.0)),
        "indicator switched off"
    );
    let (mean, se) = mean_and_se(&draws);
    assert!(max_z(&mean, &se, &exact) < 3.0, "{mean:?} {se:?} {exact:?}");
}

#[test]
fn sample_frequencies_match_probabilities() {
    let scores = [0.7, -0.2, 0.4];
    let policy = PlackettLuce::new(scores.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let perms = permutations(3);
    let mut counts = vec![0usize; perms.len()];
    let n = 50_000;
    for _ in 0..n {
        let r = sample_ranking(&scores, &mut rng);
        counts[perms.iter().position(|p| *p == r).unwrap()] += 1;
    }
    for (p, c) in perms.iter().zip(&counts) {
        let prob = policy.probability(p).unwrap();
        assert!((prob - ranking_logprob(&scores, p).unwrap().exp()).abs() < 1e-15);
        let se = (prob * (1.0 - prob) / n as f64).sqrt();
        assert!((*c as f64 / n as f64 - prob).abs() < 4.0 * se);
    }
}
